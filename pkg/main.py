import argparse
import sys
import traceback
from pathlib import Path

from pydantic import ValidationError

from src.config import (
    DEFAULT_CONFIG_PATH,
    DENSE_EXTRACTOR_NAME,
    FINAL_EXTRACTOR_NAME,
)
from src.evaluation.localization import SubprocessExtractor, localize_feature, write_pgm
from src.evaluation.reporter import SWEEP_PARAMETERS, ExperimentReporter
from src.exceptions import ConfigurationError, SLDDError
from src.pipeline import SLDDPipeline, mean_metric
from src.preprocessing.codecs import read_fmp, write_fmp
from src.preprocessing.synthetic import generate_synthetic
from src.schemas import PipelineConfig, SparsifyConfig, load_pipeline_config
from src.training.loader import ArtifactStore, DatasetBundle, DatasetStore


class SLDDCommands:
    """Maps each CLI subcommand onto pipeline stages.

    Stage commands work on one seed directory (`<workdir>/seed_<seed>`) and
    read the artifacts left there by the previous stage.
    """

    def __init__(self, config: PipelineConfig, seed: int | None = None) -> None:
        self.config: PipelineConfig = config
        self.pipeline: SLDDPipeline = SLDDPipeline(config)
        self.seed: int = config.seeds[0] if seed is None else seed

    @property
    def store(self) -> ArtifactStore:
        return self.pipeline.seed_store(self.seed)

    def _data(self) -> DatasetBundle:
        return self.pipeline.prepare_dataset()

    def gen(self, out: Path | None = None) -> int:
        """Writes the synthetic dataset."""
        print("\n▶ STAGE 0: Generating synthetic dataset")
        target = DatasetStore(out) if out is not None else self.pipeline.dataset_store()
        target.save(DatasetBundle.from_synthetic(generate_synthetic(self.config.synthetic)))
        return 0

    def train_dense(self) -> int:
        self.pipeline.train_dense(self._data(), self.store, self.seed)
        return 0

    def select(self, n_target: int | None = None) -> int:
        self.pipeline.select(self._data(), self.store, self.seed, n_target)
        return 0

    def path(self, n_target: int | None = None) -> int:
        self.pipeline.fit_path(self._data(), self.store, self.seed, n_target)
        return 0

    def sparsify(self, budget_select: float | None = None, budget_final: float | None = None) -> int:
        budgets = self.config.sparsify
        if budget_select is not None or budget_final is not None:
            budgets = SparsifyConfig(
                budget_select=budgets.budget_select if budget_select is None else budget_select,
                budget_final=budgets.budget_final if budget_final is None else budget_final,
            )
        self.pipeline.sparsify(self.store, self.seed, budgets)
        return 0

    def finetune(self) -> int:
        self.pipeline.finetune(self._data(), self.store, self.seed)
        return 0

    def metrics(self) -> int:
        self.pipeline.evaluate(self._data(), self.store, self.seed)
        return 0

    def localize(
        self,
        feature: int,
        example: int = 0,
        split: str = "test",
        input_path: Path | None = None,
        extractor_cmd: list[str] | None = None,
        n_jobs: int = 1,
    ) -> int:
        """Localization map of one feature for one input grid (FMP1 + PGM)."""
        print(f"\n▶ LOCALIZE feature {feature}")
        if input_path is not None:
            grids = read_fmp(input_path).values
        else:
            data = self._data()
            grids = (data.test_maps if split == "test" else data.train_maps).values
        if not 0 <= example < grids.shape[0]:
            raise ConfigurationError(f"example {example} outside [0, {grids.shape[0]})")

        if extractor_cmd:
            extractor = SubprocessExtractor(extractor_cmd)
        else:
            store = self.store
            name = FINAL_EXTRACTOR_NAME if store.has(FINAL_EXTRACTOR_NAME) else DENSE_EXTRACTOR_NAME
            extractor = store.load_extractor(name)

        result = localize_feature(extractor, grids[example], feature, self.config.localization, n_jobs=n_jobs)
        stem = f"localization_f{feature}_e{example}"
        fmp_path = write_fmp(self.store.path(f"{stem}.fmp"), result.values[None, None])
        pgm_path = write_pgm(self.store.path(f"{stem}.pgm"), result.values)
        print(f"📦 Artifact persisted: {fmp_path.name}, {pgm_path.name} (sizes {result.sizes})")
        return 0

    def run_pipeline(self, sweep: str | None = None, values: list[float] | None = None) -> int:
        if sweep is not None:
            self.pipeline.run_sweep(sweep, values or [])
            return 0
        summary = self.pipeline.run()
        accuracy = mean_metric(summary, "final_accuracy")
        if accuracy is not None:
            print(f"⭐ FINAL TEST ACCURACY (mean over seeds): {accuracy:.2%}")
        failed = [s for s, r in summary["seeds"].items() if r["status"] != "ok"]
        if len(failed) == len(summary["seeds"]):
            return max(r["exit_code"] for r in summary["seeds"].values())
        return 0

    def report(self) -> int:
        print("\n▶ REPORT")
        ExperimentReporter(self.pipeline.output_dir).write()
        return 0


def _values(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Sparse low-dimensional decision layers - experiment CLI")
    parser.add_argument("--config", type=Path, default=None, help=f"YAML config (default {DEFAULT_CONFIG_PATH.name} if present)")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="Override a config entry, e.g. --set finetune.beta=0")
    parser.add_argument("--workdir", type=Path, default=None, help="Output directory (overrides output_dir)")
    parser.add_argument("--seed", type=int, default=None, help="Seed directory for stage commands")

    sub = parser.add_subparsers(dest="command", required=True)
    gen = sub.add_parser("gen", help="Generate the synthetic dataset")
    gen.add_argument("--out", type=Path, default=None)
    sub.add_parser("train-dense", help="Dense head and extractor training")
    select = sub.add_parser("select", help="Greedy gated feature selection")
    select.add_argument("--n-target", type=int, default=None)
    path = sub.add_parser("path", help="Regularization path on the selected features")
    path.add_argument("--n-target", type=int, default=None, help="Use a prefix of the selection")
    sparsify = sub.add_parser("sparsify", help="Pick and prune a path model to the budgets")
    sparsify.add_argument("--budget-select", type=float, default=None)
    sparsify.add_argument("--budget-final", type=float, default=None)
    sub.add_parser("finetune", help="Finetune the sparse model with its support frozen")
    sub.add_parser("metrics", help="Accuracy, sparsity, loc_k and alignment")
    localize = sub.add_parser("localize", help="Masking-based localization map of one feature")
    localize.add_argument("--feature", type=int, required=True)
    localize.add_argument("--example", type=int, default=0)
    localize.add_argument("--split", choices=["train", "test"], default="test")
    localize.add_argument("--input", type=Path, default=None, help="FMP1 input grids instead of the dataset")
    localize.add_argument("--extractor-cmd", nargs="+", default=None, help="External FMP1 -> FMX1 extractor")
    localize.add_argument("--jobs", type=int, default=1)
    pipeline = sub.add_parser("pipeline", help="All stages for every seed, or a sweep")
    pipeline.add_argument("--sweep", choices=sorted(SWEEP_PARAMETERS), default=None)
    pipeline.add_argument("--values", type=_values, default=None, help="Comma-separated sweep values")
    sub.add_parser("report", help="Tables and plots from a finished experiment")
    return parser


def dispatch(args: argparse.Namespace) -> int:
    config_path = args.config
    if config_path is None and DEFAULT_CONFIG_PATH.exists():
        config_path = DEFAULT_CONFIG_PATH
    overrides = list(args.overrides)
    if args.workdir is not None:
        overrides.append(f"output_dir={args.workdir}")
    commands = SLDDCommands(load_pipeline_config(config_path, overrides), seed=args.seed)

    if args.command == "gen":
        return commands.gen(args.out)
    if args.command == "train-dense":
        return commands.train_dense()
    if args.command == "select":
        return commands.select(args.n_target)
    if args.command == "path":
        return commands.path(args.n_target)
    if args.command == "sparsify":
        return commands.sparsify(args.budget_select, args.budget_final)
    if args.command == "finetune":
        return commands.finetune()
    if args.command == "metrics":
        return commands.metrics()
    if args.command == "localize":
        return commands.localize(args.feature, args.example, args.split, args.input, args.extractor_cmd, args.jobs)
    if args.command == "pipeline":
        return commands.run_pipeline(args.sweep, args.values)
    return commands.report()


def main(argv: list[str] | None = None) -> int:
    """CLI entry point.

    Returns:
        int: 0 success, 2 configuration error, 3 numeric failure, 4 I/O failure.
    """
    args = build_parser().parse_args(argv)
    try:
        return dispatch(args)
    except ValidationError as e:
        print(f"\n❌ Invalid configuration: {e}", file=sys.stderr)
        return 2
    except SLDDError as e:
        print(f"\n❌ {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"\n❌ I/O failure: {e}", file=sys.stderr)
        return 4
    except Exception as e:
        print(f"\n❌ Pipeline CRITICAL FAILURE: {e}", file=sys.stderr)
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
