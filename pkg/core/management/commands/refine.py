# core/management/commands/refine.py

from pathlib import Path

from django.conf import settings

from core.config import load_scene
from core.exceptions import ConfigurationError, EmptyMeasurementError
from core.geometry import pose_error
from core.icp import IcpOptions, icp_refine_baseline
from core.io import DatasetSource, pose_from_json, read_json, write_json
from core.meshes import procedural_mesh
from core.refine import RefineOptions, refine
from core.sdf import cached_sdf, load_mesh

from ._base import ActivePoseCommand


class Command(ActivePoseCommand):
    help = 'Refines an initial object pose against the depth views of a dataset directory.'

    def add_arguments(self, parser):
        parser.add_argument('dataset', help='Dataset directory (camera.json, views/<id>/...).')
        model = parser.add_mutually_exclusive_group()
        model.add_argument('--scene', help='Scene YAML whose target mesh is the model (default <dataset>/scene.yaml).')
        model.add_argument('--mesh', help='Mesh file of the object.')
        model.add_argument('--kind', help='Procedural object kind.')
        parser.add_argument('--init', help='JSON with the initial T_ow (default <dataset>/init.json).')
        parser.add_argument('--views', type=int, nargs='+', help='View ids to use (default all).')
        parser.add_argument('--method', choices=('sdf', 'icp', 'both'), default='sdf')
        parser.add_argument('--voxel', type=float, help='SDF voxel size in mm.')
        parser.add_argument('--stride', type=int, default=1)
        parser.add_argument('--outlier-gate', type=float, dest='outlier_gate',
                            help='Residuals beyond this many mm stop pulling the pose.')
        parser.add_argument('--default-sigma', type=float, default=0.5, dest='default_sigma',
                            help='Depth stddev (mm) for views without a variance image.')
        parser.add_argument('--depth-scale', type=float, default=1.0, dest='depth_scale',
                            help='mm per raw unit for views stored as 16-bit depth.png.')
        parser.add_argument('--out', default='refine.json')

    def _mesh(self, options, dataset):
        if options['mesh']:
            return load_mesh(options['mesh'])
        if options['kind']:
            return procedural_mesh(options['kind'])
        scene_path = Path(options['scene'] or dataset / 'scene.yaml')
        if not scene_path.exists():
            raise ConfigurationError("No object model: pass --scene, --mesh or --kind.")
        return load_scene(scene_path).target_object.mesh

    def run(self, **options):
        dataset = Path(options['dataset'])
        source = DatasetSource(dataset, options['default_sigma'], options['depth_scale'], options['stride'])
        init_path = Path(options['init'] or dataset / 'init.json')
        if not init_path.exists():
            raise ConfigurationError(f"No initial pose at {init_path}; pass --init.")
        initial = pose_from_json(read_json(init_path)['T_ow'])
        mesh = self._mesh(options, dataset)

        sets = []
        for view_id in options['views'] or sorted(source.views):
            try:
                sets.append(source.acquire(view_id))
            except EmptyMeasurementError:
                self.warning(f"View {view_id} has no valid masked pixel; skipped.")
        if not sets:
            raise EmptyMeasurementError("None of the selected views has valid measurements.")
        self.stdout.write(self.style.SUCCESS(
            f"--- Refining with {len(sets)} views, {sum(len(s) for s in sets)} points ---"))

        results = []
        if options['method'] in ('sdf', 'both'):
            grid = cached_sdf(mesh, settings.SDF_CACHE_DIR, options['voxel'])
            results.append(refine(sets, initial, grid, RefineOptions(outlier_gate=options['outlier_gate'])))
        if options['method'] in ('icp', 'both'):
            results.append(icp_refine_baseline(sets, initial, mesh, IcpOptions()))

        records = []
        for result in results:
            record = result.to_record()
            if source.truth is not None:
                record['trans_err'], record['rot_err'] = pose_error(result.pose.inverse(), source.truth.inverse())
            records.append(record)
            line = f"{result.method}: {result.iterations} iterations, cost {result.final_cost:.4g}"
            if 'trans_err' in record:
                line += f", error {record['trans_err']:.3f} mm / {record['rot_err']:.3f} deg"
            if result.converged and not result.rank_deficient:
                self.success(line)
            else:
                self.warning(line + (" (rank deficient)" if result.rank_deficient else " (not converged)"))
        write_json(Path(options['out']), {'views': [s.view_id for s in sets], 'results': records})
        self.success(f"Results written to {options['out']}.")
