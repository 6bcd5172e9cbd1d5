import time
import argparse
import statistics
from typing import Any, Callable
from dataclasses import asdict, dataclass
from concurrent.futures import ThreadPoolExecutor, as_completed

import pandas as pd
from dotenv import load_dotenv

from lie_transport import CostModel, PeriodicGrid, DensityPair
from lie_transport.audit import cyclical_monotonicity_audit
from lie_transport.moduli import solve_lie
from lie_transport.transport import id1_defect, fourier_density
from lie_transport.utils.miscs import get_max_workers

load_dotenv(".env.local")

# Test parameters
RHO = [{"k": [1, 0], "cos": 0.2}]
RHOBAR = [{"k": [1, 1], "sin": 0.1}]
TAU = [0.05, 0.0]
EPSILON = 0.01
FREQ = (1, 1)


@dataclass
class BenchmarkResult:
    """Timing and accuracy of one solve on one grid."""

    size: int
    repeats: int
    avg_time: float
    min_time: float
    max_time: float
    std_dev: float
    iterations: int
    residual_norm: float
    id1_defect: float
    audit_time: float


class BenchmarkRunner:
    """Times ``solve_lie`` and the audit across grid sizes."""

    def __init__(self, repeats: int = 3, audit_samples: int = 200):
        self.repeats = repeats
        self.audit_samples = audit_samples
        self.cost = CostModel.perturbed(EPSILON, FREQ)
        self.results: list[BenchmarkResult] = []

    def densities(self, grid: PeriodicGrid) -> DensityPair:
        return DensityPair(
            fourier_density(grid, RHO), fourier_density(grid, RHOBAR)
        )

    def _timed(self, func: Callable[[], Any]) -> tuple[float, Any]:
        start = time.perf_counter()
        out = func()
        return time.perf_counter() - start, out

    def run_size(self, size: int) -> BenchmarkResult:
        grid = PeriodicGrid((size, size))
        dens = self.densities(grid)
        times = []
        chart = None
        for _ in range(self.repeats):
            t, chart = self._timed(lambda: solve_lie(self.cost, dens, TAU))
            times.append(t)
        assert chart is not None

        audit_time, _ = self._timed(
            lambda: cyclical_monotonicity_audit(
                chart.state, num_random=self.audit_samples
            )
        )
        print(f"  {size}x{size}: {statistics.mean(times):.3f}s per solve")
        return BenchmarkResult(
            size=size,
            repeats=self.repeats,
            avg_time=statistics.mean(times),
            min_time=min(times),
            max_time=max(times),
            std_dev=statistics.stdev(times) if len(times) > 1 else 0.0,
            iterations=chart.iterations,
            residual_norm=chart.residual_norm,
            id1_defect=id1_defect(chart.state),
            audit_time=audit_time,
        )

    def run(self, sizes: list[int], parallel: bool = False) -> pd.DataFrame:
        if not parallel:
            self.results = [self.run_size(s) for s in sizes]
        else:
            with ThreadPoolExecutor(max_workers=get_max_workers()) as pool:
                futures = {pool.submit(self.run_size, s): s for s in sizes}
                for future in as_completed(futures):
                    try:
                        self.results.append(future.result())
                    except Exception as e:
                        print(f"  {futures[future]} failed: {e}")
        return self.refinement_table()

    def refinement_table(self) -> pd.DataFrame:
        df = pd.DataFrame([asdict(r) for r in self.results])
        if df.empty:
            return df
        df = df.sort_values("size").reset_index(drop=True)
        # second-order defects shrink by ~4 per doubling
        df["id1_ratio"] = df["id1_defect"].shift(1) / df["id1_defect"]
        return df


def main() -> None:
    parser = argparse.ArgumentParser(description="Solver benchmarks")
    parser.add_argument("--sizes", type=int, nargs="+", default=[16, 32, 64])
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--parallel", action="store_true")
    parser.add_argument("--csv", default=None, help="write the table here")
    args = parser.parse_args()

    print(f"Running benchmarks on sizes {args.sizes}...")
    runner = BenchmarkRunner(repeats=args.repeats)
    df = runner.run(args.sizes, parallel=args.parallel)

    print("\n" + "=" * 80)
    print("BENCHMARK RESULTS")
    print("=" * 80)
    with pd.option_context("display.width", 120, "display.precision", 4):
        print(df.to_string(index=False))
    if args.csv:
        df.to_csv(args.csv, index=False)
        print(f"\nwrote {args.csv}")


if __name__ == "__main__":
    main()
