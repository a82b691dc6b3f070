"""Regenerate the golden regression traces in src/adqueue/data."""

from pathlib import Path

from adqueue import harness

GOLDEN = {
    "golden_revenue.csv": harness.Scenario("small_revenue", "revenue", {"epsilon": 0.01}, 1000, (11,)),
    "golden_ctr.csv": harness.Scenario("ctr_benchmark", "ctr", {"epsilon": 1e-4, "policy": "mwm"}, 200, (11,)),
}


def main():
    out = Path(harness.__file__).resolve().parent / "data"
    for name, sc in GOLDEN.items():
        header, data = harness.run_replica(sc, sc.seeds[0])
        harness.write_csv(out / name, header, harness._table_rows(header, data), harness._meta(sc, sc.seeds[0]))
        print(f"wrote {out / name}")


if __name__ == "__main__":
    main()
