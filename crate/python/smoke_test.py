"""Generates a world, runs oracle and faulty episodes, and checks the outputs."""

import json
import sys

import navloop


def main() -> int:
    world = navloop.generate_world("vln", seed=3, floors=2)
    meta = json.loads(world)
    print(f"world {meta['name']}: {len(meta['task']['ordered_subgoals'])} subgoals")

    trace = navloop.run_episode(world, backend="oracle", seed=0)
    lines = [json.loads(line) for line in trace.splitlines()]
    assert lines[0]["type"] == "header" and lines[-1]["type"] == "final"
    assert trace == navloop.run_episode(world, backend="oracle", seed=0), "runs differ"

    m = json.loads(navloop.episode_metrics(trace, world))
    print(f"oracle: sr={m['sr']} spl={m['spl']:.3f} ndtw={m['ndtw']:.3f} ({m['failure']})")
    assert m["sr"] and m["osr"]

    faulty = navloop.run_episode(world, backend="oracle", seed=1, ablate="scb", error_rate=0.5)
    f = json.loads(navloop.episode_metrics(faulty, world))
    print(f"faulty without backtracking: sr={f['sr']} ({f['failure']})")

    svg = navloop.render_svg(trace, world)
    assert svg.startswith("<svg") and 'class="goal"' in svg

    decision, rung, _ = navloop.parse_lang_response(
        'Sure!\n```json\n{"progress_analysis": "", "reasoning_todo": "", '
        '"reasoning_action": "door ahead", "action": {"name": "turn", "direction": "front"}}\n```'
    )
    assert rung == 2 and json.loads(decision)["action"]["direction"] == "front"

    try:
        navloop.generate_world("submarine", seed=0)
    except ValueError as e:
        print(f"rejected bad family: {e}")
    else:
        raise AssertionError("bad family accepted")

    print(f"navloop {navloop.__version__} smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
