# gridos/main.py
"""
主程序入口
run / topology / sweep 三个子命令
"""
import argparse
import json
import sys
import traceback
from pathlib import Path

# 添加项目根目录到sys.path
sys.path.insert(0, str(Path(__file__).parent))

# 导入日志配置
from log_config import logger

from config import config
from core.discovery import form_overlay
from core.errors import GridOSError
from sim.emit import OUTPUT_FILES, emit
from sim.engine import GridSimulator
from sim.partitions import compare_groups
from sim.scenario_parser import load_scenario
from sim.sweep import parse_seed_range, run_sweep


def _formats(text: str):
    formats = [f.strip() for f in text.split(',') if f.strip()]
    unknown = [f for f in formats if f not in OUTPUT_FILES]
    if unknown:
        raise argparse.ArgumentTypeError(f"unknown format: {', '.join(unknown)}")
    return formats


def _seeds(text: str):
    try:
        return parse_seed_range(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='gridos', description='GridOS discrete-event simulator')
    sub = parser.add_subparsers(dest='command', required=True)

    run_cmd = sub.add_parser('run', help='run one scenario')
    run_cmd.add_argument('--scenario', type=Path, required=True)
    run_cmd.add_argument('--seed', type=int, default=None)
    run_cmd.add_argument('--out', type=Path, default=None)
    run_cmd.add_argument('--formats', type=_formats, default=None)
    run_cmd.add_argument('--check-invariants', action='store_true')

    topo_cmd = sub.add_parser('topology', help='form the overlay and assess the partition')
    topo_cmd.add_argument('--scenario', type=Path, required=True)
    topo_cmd.add_argument('--seed', type=int, default=None)
    topo_cmd.add_argument('--compare-random', action='store_true')
    topo_cmd.add_argument('--trials', type=int,
                          default=config.get('simulation.partition_trials', 20))

    sweep_cmd = sub.add_parser('sweep', help='run a scenario over a range of seeds')
    sweep_cmd.add_argument('--scenario', type=Path, required=True)
    sweep_cmd.add_argument('--seeds', type=_seeds, required=True)
    sweep_cmd.add_argument('--out', type=Path, required=True)
    sweep_cmd.add_argument('--workers', type=int, default=None)
    return parser


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    sim = GridSimulator(scenario, seed=args.seed,
                        check_invariants=True if args.check_invariants else None)
    trace, report = sim.run()
    out_dir = args.out or config.get_path('runs') / f"{args.scenario.stem}-seed{sim.seed}"
    emit(trace, report, out_dir, args.formats)
    sys.stdout.write(report.summary())
    return 0


def cmd_topology(args) -> int:
    scenario = load_scenario(args.scenario)
    seed = scenario.seed if args.seed is None else args.seed
    topology = scenario.topology.build(seed)
    peers = [p.id for p in sorted(scenario.roster(), key=lambda p: (p.join_time, p.id))]
    state, _ = form_overlay(topology, peers, lim=scenario.lim, hysteresis=scenario.hysteresis)
    groups = [sg.members() for _, sg in sorted(state.subgrids.items())]
    result = {
        'seed': seed,
        'subgrids': [{'subgrid': sg_id, 'master': sg.master, 'members': sg.members()}
                     for sg_id, sg in sorted(state.subgrids.items())],
    }
    if args.compare_random:
        result['comparison'] = compare_groups(groups, topology, seed, args.trials).to_dict()
    sys.stdout.write(json.dumps(result, indent=2, ensure_ascii=False) + '\n')
    return 0


def cmd_sweep(args) -> int:
    scenario = load_scenario(args.scenario)
    results = run_sweep(scenario, args.seeds, args.out, workers=args.workers)
    for seed, report in results:
        sys.stdout.write(f"seed {seed}: {report.jobs_completed}/{report.jobs_submitted} jobs, "
                         f"{report.subgrids} subgrids\n")
    return 0


COMMANDS = {
    'run': cmd_run,
    'topology': cmd_topology,
    'sweep': cmd_sweep,
}


def main(argv=None) -> int:
    """主函数"""
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except GridOSError as e:
        logger.warning(f"{type(e).__name__}: {e}")
        sys.stderr.write(json.dumps({'error': type(e).__name__, 'message': str(e)},
                                    ensure_ascii=False) + '\n')
        return 2
    except Exception as e:
        logger.error(f"运行失败: {e}")
        logger.error(traceback.format_exc())
        return 1


if __name__ == '__main__':
    sys.exit(main())
