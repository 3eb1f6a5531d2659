"""Command-line entry points.

Every subcommand accepts ``--seed``, ``--step-limit``, ``--radius`` and
``--threads``. Exit status is 0 on success and 2 on bad input data; data
errors are written to stderr as one JSON object per line.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from vlnce.errors import DataError, InvariantError, LegUnreachable, ParseError, UnknownNodeId
from vlnce.features import FeatureProvider
from vlnce.graph_snap import format_snapped, nearest_node, snap, snap_quality
from vlnce.harness import fixtures
from vlnce.harness.policies import POLICIES, make_policy
from vlnce.harness.render import write_map
from vlnce.harness.training import (
    INFLECTION_COEFFICIENT,
    DaggerDataset,
    DaggerMode,
    dagger_collect,
    format_dagger,
    format_records,
    inflection_frequency,
    reference_records,
)
from vlnce.metrics import SUCCESS_RADIUS, evaluate, format_table
from vlnce.simulator import DEFAULT_STEP_LIMIT, format_trajectory, read_trajectory, run_policy
from vlnce.transfer import (
    apply_overrides,
    dataset_stats,
    load_instructions,
    load_overrides,
    load_trajectories,
    project_node,
    transfer_dataset,
    verify_trajectory,
)
from vlnce.world import format_episodes, load_environment, load_episodes, load_graph


def _map(fn, items, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def _select(episodes, ids):
    if not ids:
        return episodes
    wanted = set(ids)
    picked = [e for e in episodes if e.id in wanted]
    missing = wanted - {e.id for e in picked}
    if missing:
        raise ParseError(f"episode ids not found: {sorted(missing)}")
    return picked


def _trajectory_path(directory, episode_id: str) -> Path:
    return Path(directory) / f"{episode_id}.traj"


def _load_run(directory, episode, env):
    path = _trajectory_path(directory, episode.id)
    if not path.exists():
        raise ParseError(f"no trajectory file for episode {episode.id}", path=str(path))
    eid, env_hash, traj = read_trajectory(path)
    if eid != episode.id:
        raise InvariantError("trajectory episode id matches", f"{path}: {eid} != {episode.id}")
    if env_hash != env.digest:
        raise InvariantError("trajectory environment hash matches", f"{path}: {env_hash} != {env.digest}")
    return traj


# ---------------------------------------------------------------- subcommands


def cmd_run(args) -> None:
    env = load_environment(args.env)
    episodes = _select(load_episodes(args.episodes), args.episode)
    policy_name = args.policy
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    provider = FeatureProvider(env, seed=args.seed)

    def work(item):
        k, ep = item
        policy = make_policy(policy_name, args.seed)
        traj = run_policy(env, ep, policy, args.step_limit, seed=[args.seed, k], provider=provider)
        return ep.id, traj

    for eid, traj in _map(work, list(enumerate(episodes)), args.threads):
        _trajectory_path(out, eid).write_text(format_trajectory(traj, eid, env.digest))


def cmd_eval(args) -> None:
    env = load_environment(args.env)
    episodes = load_episodes(args.episodes)

    def work(ep):
        return ep.id, evaluate(env, ep, _load_run(args.trajectories, ep, env), args.radius)

    Path(args.out).write_text(format_table(_map(work, episodes, args.threads)))


def cmd_collect(args) -> None:
    env = load_environment(args.env)
    episodes = load_episodes(args.episodes)
    dataset = DaggerDataset()
    for n in range(args.first_round, args.first_round + args.rounds):
        dagger_collect(
            env,
            episodes,
            make_policy(args.policy, args.seed),
            n,
            per_round=args.per_round,
            mode=DaggerMode(args.mode),
            step_limit=args.step_limit,
            seed=args.seed,
            dataset=dataset,
            threads=args.threads,
        )
    Path(args.out).write_text(format_dagger(dataset, args.coef))


def cmd_weights(args) -> None:
    env = load_environment(args.env)
    episodes = load_episodes(args.episodes)
    freq = inflection_frequency([e.reference_actions for e in episodes])
    coef = 1.0 / freq if args.coef == "auto" else float(args.coef)
    records = [r for ep in episodes for r in reference_records(env, ep, coef)]
    text = format_records(records)
    Path(args.out).write_text(f"# inflection_frequency {freq!r} coefficient {coef!r}\n" + text)


def cmd_render(args) -> None:
    env = load_environment(args.env)
    reference = trajectory = None
    if args.episodes:
        episodes = load_episodes(args.episodes)
        ep = _select(episodes, [args.episode])[0] if args.episode else episodes[0]
        reference = [w for w in ep.reference_waypoints]
        if args.trajectories:
            trajectory = [p.position for p in _load_run(args.trajectories, ep, env).poses]
    if args.trajectory:
        trajectory = [p.position for p in read_trajectory(args.trajectory)[2].poses]
    write_map(args.out, env, reference, trajectory, args.scale)


def cmd_verify(args) -> None:
    env = load_environment(args.env)
    graph = apply_overrides(load_graph(args.graph), load_overrides(args.overrides) if args.overrides else None)
    trajectories = load_trajectories(args.trajectories)
    projections = {}

    def project(n):
        if n not in projections:
            projections[n] = project_node(env, graph.nodes[n], n) if n in graph.nodes else None
        return projections[n]

    lines = []
    for tid, nodes in trajectories.items():
        reports = [project(n) for n in nodes]
        if any(r is None for r in reports):
            raise UnknownNodeId(next(n for n, r in zip(nodes, reports) if r is None))
        bad = [r.node_id for r in reports if r.projected is None]
        if bad:
            lines.append(f"{tid} INVALID_NODE nodes {' '.join(map(str, bad))}")
            continue
        result = verify_trajectory(env, [r.projected for r in reports])
        status = result.status.value if result.failing_leg is None else "DISJOINT"
        lines.append(f"{tid} {status}" + (f" {result.failing_leg}" if result.failing_leg is not None else ""))
        for leg in result.legs:
            lines.append(
                f"  leg {leg.index} {'PASS' if leg.passed else 'FAIL'} {leg.final_distance:.3f} {len(leg.actions)}"
                + (f" {leg.reason}" if leg.reason else "")
            )
            if not leg.passed:
                rec = LegUnreachable(leg.index, leg.reason).record()
                rec["traj_id"] = tid
                print(json.dumps(rec, sort_keys=True), file=sys.stderr)
    Path(args.out).write_text("\n".join(lines) + "\n")


def cmd_transfer(args) -> None:
    env = load_environment(args.env)
    graph = load_graph(args.graph)
    trajectories = load_trajectories(args.trajectories)
    instructions = load_instructions(args.instructions) if args.instructions else None
    overrides = load_overrides(args.overrides) if args.overrides else None
    episodes, report = transfer_dataset(env, graph, trajectories, instructions, overrides, threads=args.threads)
    Path(args.out).write_text(format_episodes(episodes))
    if args.report:
        Path(args.report).write_text(report.format())


def cmd_snap(args) -> None:
    graph = load_graph(args.graph)
    episodes = load_episodes(args.episodes)
    rows, quality = [], []
    for ep in episodes:
        path = _trajectory_path(args.trajectories, ep.id)
        if not path.exists():
            raise ParseError(f"no trajectory file for episode {ep.id}", path=str(path))
        positions = [p.position for p in read_trajectory(path)[2].poses]
        start = ep.node_ids[0] if ep.node_ids else nearest_node(graph, ep.start.position)
        snapped = snap(graph, start, positions)
        rows.append((ep.id, snapped))
        quality.append((ep.id, snap_quality(graph, snapped, positions)))
    Path(args.out).write_text(format_snapped(rows))
    if args.quality:
        Path(args.quality).write_text(
            "".join(
                f"{eid} oscillations {q.oscillations} mean_assigned_distance {q.mean_assigned_distance:.4f} "
                f"far_positions {q.far_positions}\n"
                for eid, q in quality
            )
        )


def cmd_stats(args) -> None:
    Path(args.out).write_text(dataset_stats(load_episodes(args.episodes)).format())


def cmd_fixtures(args) -> None:
    scenes = fixtures.transfer_suite(args.seed, n_scenes=args.scenes)
    for scene in scenes:
        fixtures.write_scene(scene, Path(args.out) / scene.name)


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="base random seed (default 0)")
    common.add_argument("--step-limit", type=int, default=DEFAULT_STEP_LIMIT, help="max actions per episode")
    common.add_argument("--radius", type=float, default=SUCCESS_RADIUS, help="success radius in meters")
    common.add_argument("--threads", type=int, default=1, help="worker threads (output is order-independent)")

    parser = argparse.ArgumentParser(prog="vlnce", description="Continuous-environment navigation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help):
        p = sub.add_parser(name, parents=[common], help=help)
        p.set_defaults(func=fn)
        return p

    p = add("run", cmd_run, "roll out a policy, one trajectory file per episode")
    p.add_argument("--env", required=True)
    p.add_argument("--episodes", required=True)
    p.add_argument("--policy", choices=sorted(POLICIES), default="oracle")
    p.add_argument("--episode", action="append", help="restrict to this episode id (repeatable)")
    p.add_argument("--out", required=True, help="output directory")

    p = add("eval", cmd_eval, "compute TL NE nDTW OS SR SPL per episode")
    p.add_argument("--env", required=True)
    p.add_argument("--episodes", required=True)
    p.add_argument("--trajectories", required=True, help="directory written by 'run'")
    p.add_argument("--out", required=True)

    p = add("collect", cmd_collect, "collect DAgger rounds as labelled records")
    p.add_argument("--env", required=True)
    p.add_argument("--episodes", required=True)
    p.add_argument("--policy", choices=sorted(POLICIES), default="cma")
    p.add_argument("--rounds", type=int, default=1)
    p.add_argument("--first-round", type=int, default=0)
    p.add_argument("--per-round", type=int, default=100)
    p.add_argument("--mode", choices=[m.value for m in DaggerMode], default=DaggerMode.STANDARD.value)
    p.add_argument("--coef", type=float, default=INFLECTION_COEFFICIENT)
    p.add_argument("--out", required=True)

    p = add("weights", cmd_weights, "inflection weights and progress targets for reference paths")
    p.add_argument("--env", required=True)
    p.add_argument("--episodes", required=True)
    p.add_argument("--coef", default=str(INFLECTION_COEFFICIENT), help="coefficient or 'auto' (inverse frequency)")
    p.add_argument("--out", required=True)

    p = add("render", cmd_render, "top-down map (.pgm image or text)")
    p.add_argument("--env", required=True)
    p.add_argument("--episodes")
    p.add_argument("--episode", help="episode id (default: first)")
    p.add_argument("--trajectories", help="directory written by 'run'")
    p.add_argument("--trajectory", help="single trajectory file")
    p.add_argument("--scale", type=int, default=2, help="pixels per cell for .pgm output")
    p.add_argument("--out", required=True)

    p = add("verify", cmd_verify, "check nav-graph trajectories leg by leg")
    p.add_argument("--env", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--trajectories", required=True)
    p.add_argument("--overrides")
    p.add_argument("--out", required=True)

    p = add("transfer", cmd_transfer, "convert nav-graph trajectories into episodes")
    p.add_argument("--env", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--trajectories", required=True)
    p.add_argument("--instructions")
    p.add_argument("--overrides")
    p.add_argument("--out", required=True)
    p.add_argument("--report")

    p = add("snap", cmd_snap, "snap continuous trajectories onto the nav-graph")
    p.add_argument("--graph", required=True)
    p.add_argument("--trajectories", required=True, help="directory written by 'run'")
    p.add_argument("--episodes", required=True)
    p.add_argument("--quality", help="optional per-episode snap quality report")
    p.add_argument("--out", required=True)

    p = add("stats", cmd_stats, "episode dataset statistics")
    p.add_argument("--episodes", required=True)
    p.add_argument("--out", required=True)

    p = add("fixtures", cmd_fixtures, "write the synthetic scene suite")
    p.add_argument("--scenes", type=int, default=20)
    p.add_argument("--out", required=True, help="output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except DataError as exc:
        print(json.dumps(exc.record(), sort_keys=True), file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}, sort_keys=True), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
