#!/usr/bin/env python3
"""Regenerate the 50-pair accuracy-calibration corpus under fixtures/accuracy/.

The corpus is constructed so the micro-averaged component accuracies are
exactly: environment 1.00, road_network 1.00, oracle 0.98, actor 0.97,
overall 0.99.  Field counts per case: environment 2, road_network 8
(road_type, ways, lanes, markers, three sign slots, speed limit), actor 4
(ego type/behavior/speed/model), oracle 2 (rule, violation_type) -> 800
fields total, with 6 seeded ego-field disagreements (0.97 * 200) and 2
seeded oracle disagreements (0.98 * 100), 8/800 = 1% overall error.

Run from the repository root:  python scripts/gen_accuracy_corpus.py
"""

from __future__ import annotations

from pathlib import Path

from scenforge import dsl

OUT_DIR = Path(__file__).resolve().parent.parent / "fixtures" / "accuracy"

WEATHER = ("sunny", "cloudy", "overcast", "rainy", "snowy", "foggy", "windy", "not_mentioned")
TIMES = ("daytime", "nighttime", "not_mentioned")
ROADS = (("straight", 2), ("intersection", 4), ("t_intersection", 3), ("curve", 2), ("straight", 1))
MARKERS = ("solid_line", "broken_line", "not_mentioned")
BEHAVIORS = ("go_forward", "turn_left", "turn_right", "static", "stop")
MODELS = ("vehicle.lincoln.mkz_2017", "vehicle.tesla.model3", "vehicle.audi.tt",
          "vehicle.nissan.patrol", "vehicle.toyota.prius")
RULES = ("21453", "21460", "21461", "21800", "21802", "22107", "22349", "22350", "22450")
VIOLATION_TYPES = ("red_light_running", "opposite_lane_crossing", "unsafe_passing",
                   "failure_to_yield", "speeding", "stop_sign_violation")

# case index -> (ego field, replacement) applied to the candidate document
ACTOR_ERRORS = {
    3: ("behavior", "turn_left"),
    11: ("actor_type", "truck"),
    19: ("speed_mps", 12.5),
    27: ("model_id", "vehicle.dodge.charger_2020"),
    35: ("behavior", "static"),
    43: ("speed_mps", 8.25),
}
# case index -> oracle field error
ORACLE_ERRORS = {7: "violation_type", 23: "rule"}


def golden_spec(index: int) -> dsl.ScenarioSpec:
    road_type, ways = ROADS[index % len(ROADS)]
    ego = dsl.ActorSpec(
        actor_id="ego",
        actor_type="car" if index % 3 else "truck",
        behavior=BEHAVIORS[index % len(BEHAVIORS)],
        speed_mps=float(6 + (index % 9)),
        model_id=MODELS[index % len(MODELS)],
    )
    return dsl.ScenarioSpec(
        scenario_id=f"acc-case-{index:02d}",
        environment=dsl.Environment(
            weather=WEATHER[index % len(WEATHER)],
            time_of_day=TIMES[index % len(TIMES)],
        ),
        road_network=dsl.RoadNetwork(
            road_type=road_type,
            number_of_ways=ways,
            number_of_lanes=1 + index % 3,
            road_markers=MARKERS[index % len(MARKERS)],
            traffic_signs=("stop_sign", "speed_limit_sign", "traffic_light"),
            speed_limit_value=float(10 + index % 5),
        ),
        actors=dsl.ActorSet(ego=ego, npcs=()),
        oracle=(dsl.OracleEntry(
            rule_id=RULES[index % len(RULES)],
            violation_type=VIOLATION_TYPES[index % len(VIOLATION_TYPES)],
            description=f"Reference oracle for calibration case {index}.",
            violating_actor="ego",
        ),),
    )


def candidate_spec(index: int, golden: dsl.ScenarioSpec) -> dsl.ScenarioSpec:
    ego = golden.actors.ego
    oracle = golden.oracle[0]
    if index in ACTOR_ERRORS:
        field_name, value = ACTOR_ERRORS[index]
        if getattr(ego, field_name) == value:
            raise AssertionError(f"case {index}: seeded error equals the golden value")
        ego = dsl.ActorSpec(
            actor_id=ego.actor_id,
            actor_type=value if field_name == "actor_type" else ego.actor_type,
            behavior=value if field_name == "behavior" else ego.behavior,
            speed_mps=value if field_name == "speed_mps" else ego.speed_mps,
            model_id=value if field_name == "model_id" else ego.model_id,
        )
    if index in ORACLE_ERRORS:
        if ORACLE_ERRORS[index] == "violation_type":
            wrong = next(v for v in VIOLATION_TYPES if v != oracle.violation_type)
            oracle = dsl.OracleEntry(oracle.rule_id, wrong, oracle.description, oracle.violating_actor)
        else:
            wrong = next(r for r in RULES if r != oracle.rule_id)
            oracle = dsl.OracleEntry(wrong, oracle.violation_type, oracle.description, oracle.violating_actor)
    return dsl.ScenarioSpec(
        scenario_id=golden.scenario_id,
        environment=golden.environment,
        road_network=golden.road_network,
        actors=dsl.ActorSet(ego=ego, npcs=()),
        oracle=(oracle,),
    )


def main() -> None:
    OUT_DIR.mkdir(parents=True, exist_ok=True)
    for index in range(50):
        golden = golden_spec(index)
        candidate = candidate_spec(index, golden)
        for spec in (golden, candidate):
            parsed = dsl.parse_dsl(dsl.serialize_dsl(spec))
            assert isinstance(parsed, dsl.ScenarioSpec) and not dsl.validate_spec(parsed)
        (OUT_DIR / f"case{index:02d}.golden.yaml").write_text(
            dsl.serialize_dsl(golden), encoding="utf-8")
        (OUT_DIR / f"case{index:02d}.candidate.yaml").write_text(
            dsl.serialize_dsl(candidate), encoding="utf-8")
    print(f"wrote 50 pairs to {OUT_DIR}")


if __name__ == "__main__":
    main()
