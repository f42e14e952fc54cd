"""Staged SLDD experiment: dense training, feature selection, sparse path,
sparsification, finetuning and evaluation, run per seed.

Every stage reads its inputs from and writes its outputs to the seed's
artifact directory, so any stage can be rerun in isolation.
"""
import json
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import ValidationError
from sklearn.linear_model import LogisticRegression

from src.config import (
    ALIGNMENT_NAME,
    DENSE_CURVES_NAME,
    DENSE_EXTRACTOR_NAME,
    DENSE_MODEL_NAME,
    FINAL_EXTRACTOR_NAME,
    FINAL_MODEL_NAME,
    FINETUNE_CURVES_NAME,
    MAX_THREADS,
    METRICS_NAME,
    PATH_NAME,
    RUN_INFO_NAME,
    SELECTION_NAME,
    SPARSE_MODEL_NAME,
    SUMMARY_NAME,
    TEST_FEATURES_NAME,
    TRAIN_FEATURES_NAME,
)
from src.core.containers import FeatureMapBatch, FeatureMatrix, NormStats, SparseLinearModel
from src.core.ops import pool_maps, standardize
from src.evaluation.alignment import alignment_report, alignment_scores, write_alignment_report
from src.evaluation.evaluator import ModelEvaluator, feature_recovery
from src.evaluation.reporter import SWEEP_PARAMETERS, aggregate_metrics
from src.exceptions import ArtifactError, ConfigurationError, SLDDError
from src.preprocessing.synthetic import generate_synthetic
from src.schemas import FinetuneConfig, PipelineConfig, SolverConfig, SparsifyConfig
from src.selection.selector import FeatureSelector, SelectionRecord, SelectionState
from src.solver.path import PathEntry, RegularizationPath, fit_path, sparsify
from src.training.extractor import ToyExtractor
from src.training.loader import ArtifactStore, DatasetBundle, DatasetStore
from src.training.trainer import FeatureTrainer


def input_norm_stats(data: DatasetBundle) -> NormStats:
    """Standardization of the pooled raw training maps (the dense head's input scale)."""
    return standardize(pool_maps(data.train_maps)).norm_stats


def extract(extractor: ToyExtractor, maps: FeatureMapBatch) -> FeatureMapBatch:
    return FeatureMapBatch(extractor.forward(maps.values))


def expand_path(path: RegularizationPath, columns: tuple[int, ...], n_features: int) -> RegularizationPath:
    """Embeds a path fitted on selected columns into the full feature space."""
    entries = tuple(
        PathEntry(e.lambda_, e.model.expand(columns, n_features), e.objective, e.metrics, e.epochs) for e in path
    )
    return RegularizationPath(entries, path.config, path.prox_kind)


def failure_record(error: Exception) -> dict[str, Any]:
    """Summary entry of a failed seed; exit codes follow the CLI's mapping."""
    if isinstance(error, SLDDError):
        exit_code = error.exit_code
    elif isinstance(error, ValidationError):
        exit_code = 2
    elif isinstance(error, OSError):
        exit_code = 4
    else:
        exit_code = 1
    return {"status": "failed", "error": type(error).__name__, "message": str(error), "exit_code": exit_code}


class SLDDPipeline:
    """Runs the staged experiment for every configured seed.

    Seeds are independent jobs spread over at most `SLDD_THREADS` joblib
    threads; a seed that fails is recorded in the summary and the others
    continue.
    """

    def __init__(self, config: PipelineConfig, verbose: bool = True) -> None:
        self.config: PipelineConfig = config
        self.output_dir: Path = Path(config.output_dir)
        self.verbose: bool = verbose

    def _log(self, message: str) -> None:
        if self.verbose:
            print(message)

    # =========================================================================
    # DATASET
    # =========================================================================

    def dataset_store(self) -> DatasetStore:
        return DatasetStore(self.config.dataset_dir or self.output_dir / "dataset")

    def prepare_dataset(self) -> DatasetBundle:
        """Loads the configured dataset, generating the synthetic one when absent.

        Raises:
            ArtifactError: If an explicit `dataset_dir` holds no dataset.
        """
        store = self.dataset_store()
        if store.exists():
            self._log(f"⏩ Dataset found at {store.root}")
            data = store.load()
        elif self.config.dataset_dir is not None:
            raise ArtifactError(f"dataset_dir {store.root} holds no dataset")
        else:
            self._log("\n▶ STAGE 0: Generating synthetic dataset")
            data = DatasetBundle.from_synthetic(generate_synthetic(self.config.synthetic))
            store.save(data)

        if self.config.selection.n_target > data.n_channels:
            raise ConfigurationError(
                f"selection.n_target={self.config.selection.n_target} exceeds the {data.n_channels} features"
            )
        return data

    def seed_store(self, seed: int) -> ArtifactStore:
        return ArtifactStore(self.output_dir / f"seed_{seed}")

    def _solver(self, seed: int) -> SolverConfig:
        return self.config.solver.model_copy(update={"seed": seed})

    def _trainer_config(self, base: FinetuneConfig, seed: int, **update: Any) -> FinetuneConfig:
        return base.model_copy(update={"seed": seed, **update})

    # =========================================================================
    # STAGES
    # =========================================================================

    def train_dense(self, data: DatasetBundle, store: ArtifactStore, seed: int) -> SparseLinearModel:
        """Dense head and extractor under L_CE + beta * L_div, then the standardized features."""
        self._log(f"\n▶ STAGE 1 [seed {seed}]: Dense training")
        if self.config.stages.train_dense:
            extractor = ToyExtractor.identity(data.n_channels)
            config = self._trainer_config(self.config.dense, seed)
        else:
            # Features stay the raw maps; only the head is fitted
            extractor = ToyExtractor.identity(data.n_channels, trainable=False)
            config = self._trainer_config(self.config.dense, seed, beta=0.0)

        model = SparseLinearModel.random(data.num_classes, data.n_channels, seed)
        result = FeatureTrainer(config, verbose=self.verbose).fit(
            data.train_maps, data.train_labels, model,
            extractor=extractor, norm_stats=input_norm_stats(data), stage="dense",
        )
        store.save_model(DENSE_MODEL_NAME, result.model.with_values(seed=seed))
        store.save_extractor(DENSE_EXTRACTOR_NAME, result.extractor)
        store.save_table(DENSE_CURVES_NAME, result.curves)

        train_feats = standardize(pool_maps(extract(result.extractor, data.train_maps)))
        stats = train_feats.norm_stats
        test_pooled = pool_maps(extract(result.extractor, data.test_maps)).values
        store.save_features(TRAIN_FEATURES_NAME, train_feats)
        store.save_features(TEST_FEATURES_NAME, FeatureMatrix(stats.apply(test_pooled), normalized=True, norm_stats=stats))
        return result.model

    def select(self, data: DatasetBundle, store: ArtifactStore, seed: int, n_target: int | None = None) -> SelectionState:
        n_target = self.config.selection.n_target if n_target is None else n_target
        feats = store.load_features(TRAIN_FEATURES_NAME)
        if self.config.stages.select_features:
            self._log(f"\n▶ STAGE 2 [seed {seed}]: Selecting {n_target} features")
            selector = FeatureSelector(self._solver(seed), self.config.selection, verbose=self.verbose)
            state = selector.select(feats, data.train_labels, n_target)
        else:
            self._log(f"\n⏩ STAGE 2 [seed {seed}]: Selection disabled, keeping all {feats.n_features} features")
            records = tuple(SelectionRecord(i, i, 0.0, 0.0) for i in range(feats.n_features))
            state = SelectionState(tuple(range(feats.n_features)), records)
        store.save_selection(SELECTION_NAME, state)
        return state

    def fit_path(self, data: DatasetBundle, store: ArtifactStore, seed: int, n_target: int | None = None) -> RegularizationPath:
        """Elastic-net path on the selected columns, stored in the full feature space."""
        feats = store.load_features(TRAIN_FEATURES_NAME)
        state = store.load_selection(SELECTION_NAME)
        if n_target is not None:
            if n_target > len(state.selected):
                raise ConfigurationError(f"only {len(state.selected)} features were selected, {n_target} requested")
            state = state.prefix(n_target)

        self._log(f"\n▶ STAGE 3 [seed {seed}]: Regularization path on {len(state.selected)} features")
        path = fit_path(feats.select_columns(state.selected), data.train_labels, self._solver(seed), verbose=self.verbose)
        expanded = expand_path(path, state.selected, feats.n_features)
        store.save_path(PATH_NAME, expanded)
        return expanded

    def sparsify(self, store: ArtifactStore, seed: int, budgets: SparsifyConfig | None = None) -> SparseLinearModel:
        budgets = budgets or self.config.sparsify
        self._log(f"\n▶ STAGE 4 [seed {seed}]: Sparsify (budget {budgets.budget_select:g} → {budgets.budget_final:g})")
        model = sparsify(store.load_path(PATH_NAME), budgets.budget_select, budgets.budget_final)
        model = model.with_values(seed=seed)
        store.save_model(SPARSE_MODEL_NAME, model)
        return model

    def finetune(self, data: DatasetBundle, store: ArtifactStore, seed: int) -> SparseLinearModel:
        sparse = store.load_model(SPARSE_MODEL_NAME)
        extractor = store.load_extractor(DENSE_EXTRACTOR_NAME)
        stats = store.load_features(TRAIN_FEATURES_NAME).norm_stats

        if not self.config.stages.finetune:
            self._log(f"\n⏩ STAGE 5 [seed {seed}]: Finetuning disabled, sparse model is final")
            store.save_model(FINAL_MODEL_NAME, sparse)
            store.save_extractor(FINAL_EXTRACTOR_NAME, extractor)
            return sparse

        self._log(f"\n▶ STAGE 5 [seed {seed}]: Finetuning the sparse model")
        config = self._trainer_config(self.config.finetune, seed)
        result = FeatureTrainer(config, verbose=self.verbose).fit(
            data.train_maps, data.train_labels, sparse, extractor=extractor, norm_stats=stats, stage="finetuned",
        )
        store.save_model(FINAL_MODEL_NAME, result.model)
        store.save_extractor(FINAL_EXTRACTOR_NAME, result.extractor)
        store.save_table(FINETUNE_CURVES_NAME, result.curves)
        return result.model

    def evaluate(self, data: DatasetBundle, store: ArtifactStore, seed: int) -> dict[str, Any]:
        """Test metrics of the dense, sparse and final layers plus the alignment report."""
        self._log(f"\n▶ STAGE 6 [seed {seed}]: Metrics")
        evaluator = ModelEvaluator(self.config.metrics)
        dense_extractor = store.load_extractor(DENSE_EXTRACTOR_NAME)
        dense_maps = extract(dense_extractor, data.test_maps)
        stats = store.load_features(TRAIN_FEATURES_NAME).norm_stats

        evaluations = [
            evaluator.evaluate("dense", store.load_model(DENSE_MODEL_NAME), dense_maps, data.test_labels, input_norm_stats(data))
        ]
        if store.has(SPARSE_MODEL_NAME):
            evaluations.append(
                evaluator.evaluate("sparse", store.load_model(SPARSE_MODEL_NAME), dense_maps, data.test_labels, stats)
            )
        if store.has(FINAL_MODEL_NAME):
            final_maps = extract(store.load_extractor(FINAL_EXTRACTOR_NAME), data.test_maps)
            evaluations.append(
                evaluator.evaluate("final", store.load_model(FINAL_MODEL_NAME), final_maps, data.test_labels, stats)
            )
        if self.verbose:
            evaluator.display(evaluations)

        metrics: dict[str, Any] = evaluator.flatten(evaluations)
        if store.has(SELECTION_NAME):
            selected = store.load_selection(SELECTION_NAME).selected
            metrics["n_selected"] = len(selected)
            if data.planted_features is not None:
                metrics["selection_recovery"] = feature_recovery(selected, data.planted_features)
        if data.attributes is not None:
            metrics["aligned_pairs"] = self.align(data, store)

        store.save_json(METRICS_NAME, {"seed": seed, "metrics": metrics, "stages": {e.stage: e.as_dict() for e in evaluations}})
        return metrics

    def align(self, data: DatasetBundle, store: ArtifactStore) -> int:
        """Writes the alignment report of the configured stage; returns its row count."""
        use_final = self.config.metrics.alignment_stage == "finetuned" and store.has(FINAL_EXTRACTOR_NAME)
        extractor = store.load_extractor(FINAL_EXTRACTOR_NAME if use_final else DENSE_EXTRACTOR_NAME)
        feats = pool_maps(extract(extractor, data.train_maps))
        report = alignment_report(alignment_scores(feats, data.attributes), self.config.metrics.alignment_threshold)
        write_alignment_report(report, store.path(ALIGNMENT_NAME))
        return int(len(report))

    # =========================================================================
    # EXPERIMENTS
    # =========================================================================

    def run_seed(self, data: DatasetBundle, seed: int) -> dict[str, Any]:
        """All stages for one seed; stage errors are returned, not raised."""
        store = self.seed_store(seed)
        try:
            self.train_dense(data, store, seed)
            self.select(data, store, seed)
            self.fit_path(data, store, seed)
            self.sparsify(store, seed)
            self.finetune(data, store, seed)
            metrics = self.evaluate(data, store, seed)
        except Exception as error:
            print(f"❌ Seed {seed} failed: {error}")
            return failure_record(error)
        print(f"✅ Seed {seed} completed")
        return {"status": "ok", "metrics": metrics}

    def _map_seeds(self, job: Callable[[int], Any]) -> list[Any]:
        seeds = self.config.seeds
        n_jobs = min(MAX_THREADS, len(seeds))
        if n_jobs == 1:
            return [job(seed) for seed in seeds]
        return Parallel(n_jobs=n_jobs, prefer="threads")(delayed(job)(seed) for seed in seeds)

    def run(self) -> dict[str, Any]:
        """Runs every seed and writes `summary.json` (deterministic) and `run_info.json`.

        Returns:
            dict: The summary document.
        """
        started = time.perf_counter()
        started_at = datetime.now(timezone.utc).isoformat()
        print("\n" + "=" * 70)
        print(f"🚀 STARTING SLDD PIPELINE ({len(self.config.seeds)} seeds)")
        print("=" * 70)

        data = self.prepare_dataset()
        results = self._map_seeds(lambda seed: self.run_seed(data, seed))

        seeds = {str(seed): result for seed, result in zip(self.config.seeds, results)}
        ok_rows = [r["metrics"] for r in results if r["status"] == "ok"]
        summary = {
            "config": self.config.model_dump(mode="json"),
            "seeds": seeds,
            "aggregate": aggregate_metrics(ok_rows),
        }
        self._write_json(SUMMARY_NAME, summary)
        self._write_json(RUN_INFO_NAME, {
            "started_at": started_at,
            "finished_at": datetime.now(timezone.utc).isoformat(),
            "duration_seconds": round(time.perf_counter() - started, 3),
            "threads": MAX_THREADS,
            "failed_seeds": [s for s, r in seeds.items() if r["status"] != "ok"],
        })

        n_failed = len(results) - len(ok_rows)
        status = "✅ PIPELINE COMPLETED" if n_failed == 0 else f"⚠️ PIPELINE COMPLETED WITH {n_failed} FAILED SEED(S)"
        print(f"\n{status}")
        return summary

    def run_sweep(self, parameter: str, values: list[float]) -> pd.DataFrame:
        """Reruns the post-selection stages for each value of `parameter`.

        Selection runs once per seed at the largest requested n_target; as it
        is greedy, smaller n_target values use its prefixes. Results go to
        `sweep_<parameter>.csv`.

        Raises:
            ConfigurationError: On an unknown parameter or an empty value list.
        """
        if parameter not in SWEEP_PARAMETERS:
            raise ConfigurationError(f"cannot sweep {parameter!r}; choose one of {sorted(SWEEP_PARAMETERS)}")
        if not values:
            raise ConfigurationError("a sweep needs at least one value")
        values = sorted(set(values))
        if parameter == "n_target" and any(v != int(v) or v < 1 for v in values):
            raise ConfigurationError("n_target values must be positive integers")

        print(f"\n🚀 SWEEP over {parameter}: {values}")
        data = self.prepare_dataset()
        per_seed = self._map_seeds(lambda seed: self._sweep_seed(data, seed, parameter, values))
        frame = pd.DataFrame([row for rows in per_seed for row in rows])

        self.output_dir.mkdir(parents=True, exist_ok=True)
        path = self.output_dir / f"sweep_{parameter}.csv"
        frame.to_csv(path, index=False)
        print(f"📦 Artifact persisted: {path.name}")
        return frame

    def _sweep_seed(self, data: DatasetBundle, seed: int, parameter: str, values: list[float]) -> list[dict[str, Any]]:
        store = self.seed_store(seed)
        rows: list[dict[str, Any]] = []
        try:
            if not (store.has(DENSE_EXTRACTOR_NAME) and store.has(TRAIN_FEATURES_NAME)):
                self.train_dense(data, store, seed)
            n_select = int(max(values)) if parameter == "n_target" else self.config.selection.n_target
            if not store.has(SELECTION_NAME) or len(store.load_selection(SELECTION_NAME).selected) < n_select:
                self.select(data, store, seed, n_select)
        except Exception as error:
            print(f"❌ Seed {seed} failed before the sweep: {error}")
            return [{"seed": seed, "parameter": parameter, "value": v, **failure_record(error)} for v in values]

        for value in values:
            variant = store.child(f"sweep_{parameter}_{value:g}")
            if parameter == "n_target":
                n_target, budgets = int(value), self.config.sparsify
            else:
                n_target = self.config.selection.n_target
                budgets = SparsifyConfig(budget_select=max(self.config.sparsify.budget_select, value), budget_final=value)
            try:
                self.fit_path(data, variant, seed, n_target)
                self.sparsify(variant, seed, budgets)
                self.finetune(data, variant, seed)
                metrics = self.evaluate(data, variant, seed)
                rows.append({"seed": seed, "parameter": parameter, "value": value, "status": "ok", **metrics})
            except Exception as error:
                print(f"❌ Seed {seed}, {parameter}={value:g} failed: {error}")
                rows.append({"seed": seed, "parameter": parameter, "value": value, **failure_record(error)})
        return rows

    def _write_json(self, name: str, payload: dict[str, Any]) -> Path:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        path = self.output_dir / name
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        print(f"📦 Artifact persisted: {path.name}")
        return path


def mean_metric(summary: dict[str, Any], name: str) -> float | None:
    """Mean of one aggregated metric in a summary document."""
    stats = summary["aggregate"].get(name)
    return None if stats is None else stats["mean"]


def dense_oracle_accuracy(data: DatasetBundle) -> float:
    """Test accuracy of a dense logistic regression on standardized pooled maps."""
    train = standardize(pool_maps(data.train_maps))
    test = train.norm_stats.apply(pool_maps(data.test_maps).values)
    clf = LogisticRegression(max_iter=2000).fit(train.values, data.train_labels.labels)
    return float(np.mean(clf.predict(test) == data.test_labels.labels))
