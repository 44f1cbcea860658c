import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

# Local project imports
from config_loader import RunConfig, load_config
from datasets import gradcheck_instance
from dissim import euclidean_distances, pca_embed, phi_transform, sample_pairs, symmetrize
from errors import BundleError, DataFormatError, EvclusError, ValidationError
from evaluation import EvalReport, adjusted_rand_index, evaluate_partition, holdout_loss, shepard_table
from evidential import EvidentialPartition, empty_partition, hard_partition, rough_partition
from focalsets import Frame, build_focal_sets
from logger import attach_report_handler, detach_report_handler, setup_logging
from losses import GRAD_TOLERANCE, TrainingData, grad_check
from model_bundle import load_bundle, save_bundle
from network import EvclusModel, predict
from ocsvm import fit_one_class_svm
from training import FitResult, train
from utils import (
    read_attributes, read_constraints, read_dissimilarities, read_labels,
    read_matrix, read_partition, read_truth, write_json, write_partition, write_table
)

log = logging.getLogger("main")

VERSION = "1.0.0"
DEFAULT_CONFIG = "config.json"

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2

# --- Output file names ---
BUNDLE_NAME = "model.json"
PARTITION_NAME = "partition.csv"
ROUGH_NAME = "rough_partition.json"
REPORT_NAME = "training_report.jsonl"
SUMMARY_NAME = "fit_summary.json"


# --- Argument parsing ---

def setup_argparse() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", type=str, default=None,
                        help=f"Path to the configuration file (default: ./{DEFAULT_CONFIG} if present).")
    common.add_argument("--seed", type=int, default=None, help="Random seed. (Overrides config)")
    common.add_argument("--threads", type=int, default=None, help="Worker threads for restarts. (Overrides config)")
    common.add_argument("-o", "--out", type=str, default=None, help="Output directory. (Overrides config)")
    group = common.add_mutually_exclusive_group()
    group.add_argument("-v", "--verbose", action="store_true", help="Enable detailed DEBUG logging.")
    group.add_argument("-q", "--quiet", action="store_true", help="Disable all logging except ERROR messages.")

    parser = argparse.ArgumentParser(
        description="Evidential clustering with a neural network trained on pairwise dissimilarities."
    )
    verbs = parser.add_subparsers(dest="verb", required=True)

    fit = verbs.add_parser("fit", parents=[common], help="Train a model and write its partition.")
    fit.add_argument("--attributes", type=str, default=None, help="Attribute CSV (header row).")
    fit.add_argument("--dissimilarities", type=str, default=None, help="Square or triplet dissimilarity CSV.")
    fit.add_argument("--mode", choices=["attribute", "relational"], default=None)
    fit.add_argument("--constraints", type=str, default=None, help="Constraint CSV rows (i, j, ML|CL).")
    fit.add_argument("--labels", type=str, default=None, help="Label CSV rows (i, y).")
    fit.add_argument("--truth", type=str, default=None, help="Ground-truth labels, logged as ARI.")
    fit.add_argument("--clusters", type=int, default=None)
    fit.add_argument("--scheme", choices=["full", "singletons_plus", "pairs_plus", "auto"], default=None)
    fit.add_argument("--restarts", type=int, default=None)
    fit.add_argument("--pair-mode", dest="pair_mode", choices=["auto", "dense", "sampled", "minibatch"], default=None)
    fit.add_argument("--pca-p", dest="pca_p", type=int, default=None, help="PCA dimension in relational mode.")
    fit.add_argument("--max-epochs", dest="max_epochs", type=int, default=None)

    pred = verbs.add_parser("predict", parents=[common], help="Predict masses for new objects.")
    pred.add_argument("--bundle", type=str, required=True)
    pred.add_argument("--input", type=str, required=True,
                      help="Attribute CSV, or headerless dissimilarity rows in relational mode.")
    pred.add_argument("--output", type=str, default=None, help="Partition CSV (default: <out>/predictions.csv).")

    ev = verbs.add_parser("evaluate", parents=[common], help="Score a partition against ground truth.")
    ev.add_argument("--partition", type=str, required=True)
    ev.add_argument("--truth", type=str, required=True)
    ev.add_argument("--bundle", type=str, default=None)
    ev.add_argument("--data", type=str, default=None,
                    help="Inputs of the partitioned objects (attributes, or dissimilarity rows in relational mode).")
    ev.add_argument("--dissimilarities", type=str, default=None,
                    help="Square dissimilarities among the partitioned objects (hold-out loss).")
    ev.add_argument("--report", type=str, default=None, help="Report JSON (default: <out>/eval_report.json).")

    gc = verbs.add_parser("gradcheck", parents=[common], help="Check analytic gradients on a random instance.")
    gc.add_argument("--n", type=int, default=6)
    gc.add_argument("--d", type=int, default=2)
    gc.add_argument("--clusters", type=int, default=None)
    gc.add_argument("--scheme", choices=["full", "singletons_plus", "pairs_plus", "auto"], default=None)
    gc.add_argument("--gate", action=argparse.BooleanOptionalAction, default=None,
                    help="Enable the outlier gate. (Default: svm.enabled from config)")
    gc.add_argument("--with-constraints", action="store_true")
    gc.add_argument("--with-labels", action="store_true")
    gc.add_argument("--instances", type=int, default=1)
    gc.add_argument("--inject-fault", dest="inject_fault", type=str, default=None, help=argparse.SUPPRESS)

    verbs.add_parser("version", help="Print the version.")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Config file values with command-line flags applied on top."""
    config_path = args.config
    if config_path is None and Path(DEFAULT_CONFIG).exists():
        config_path = DEFAULT_CONFIG
    cfg = RunConfig.from_dict(load_config(config_path)) if config_path else RunConfig()

    flags = {"seed": args.seed, "threads": args.threads, "out": args.out}
    for name in ("attributes", "dissimilarities", "mode", "constraints", "labels", "truth",
                 "clusters", "scheme", "restarts", "pair_mode", "pca_p", "max_epochs"):
        if hasattr(args, name):
            flags[name] = getattr(args, name)
    if args.verb != "fit":
        flags.pop("dissimilarities", None)
        flags.pop("truth", None)
    return cfg.override(**flags)


# --- Fit ---

@dataclass
class FitOutputs:
    model: EvclusModel
    partition: EvidentialPartition
    result: FitResult
    out_dir: Path


def run_fit(cfg: RunConfig) -> FitOutputs:
    """
    load -> (relational: symmetrize, PCA) -> distances -> phi -> optional SVM
    -> train -> bundle, partition, rough partition and report.
    """
    cfg.validate()
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    # --- 1. Load data ---
    pca = None
    if cfg.mode == "relational":
        D = symmetrize(read_dissimilarities(cfg.dissimilarities))
        pca, X = pca_embed(D, cfg.pca_p)
    else:
        X, _ = read_attributes(cfg.attributes)
        D = read_dissimilarities(cfg.dissimilarities) if cfg.dissimilarities else euclidean_distances(X)
        if D.shape[0] != X.shape[0]:
            raise ValidationError(f"{X.shape[0]} objects in the attributes but {D.shape[0]} in the dissimilarities")
    n = X.shape[0]

    # --- 2. Focal sets, pairs, calibration ---
    fs = build_focal_sets(Frame(cfg.clusters), cfg.scheme)
    loss_cfg = cfg.loss_config(n)
    neighbors = sample_pairs(n, loss_cfg.p, cfg.seed) if loss_cfg.mode == "sampled" else None
    view = phi_transform(D, cfg.d0quantile, neighbors=neighbors, keep_matrix=loss_cfg.mode == "minibatch")
    log.info(f"{n} objects, {fs!r}, pair mode {loss_cfg.mode} ({view.n_pairs} retained pairs)")

    # --- 3. Optional outlier gate ---
    svm = scores = None
    if cfg.svm_enabled:
        svm = fit_one_class_svm(X, nu=cfg.svm_nu, sigma=cfg.svm_sigma, seed=cfg.seed)
        scores = svm.decision(X)
        log.info(f"{int(np.sum(scores < 0))} training objects fall outside the SVM region")

    constraints = read_constraints(cfg.constraints) if cfg.constraints else None
    labels = read_labels(cfg.labels) if cfg.labels else None
    data = TrainingData(X=X, fs=fs, svm_scores=scores, constraints=constraints, labels=labels)

    # --- 4. Train ---
    handler = attach_report_handler(str(out_dir / REPORT_NAME))
    try:
        result = train(data, view, loss_cfg, cfg.optimizer_config(), cfg.hidden_units)
    finally:
        detach_report_handler(handler)

    model = EvclusModel(
        fs=fs, params=result.params, gamma_phi=view.gamma, d0=view.d0,
        svm=svm, pca=pca, mode=cfg.mode,
        metadata={"n_train": n, "seed": cfg.seed, "pair_mode": loss_cfg.mode,
                  "best_restart": result.best_restart + 1, "final_loss": result.breakdown.total,
                  "version": VERSION},
    )

    # --- 5. Write artifacts ---
    partition = predict(model, X)
    save_bundle(model, out_dir / BUNDLE_NAME)
    write_partition(partition, out_dir / PARTITION_NAME)
    write_json(rough_partition(partition).to_dict(one_based=True), out_dir / ROUGH_NAME)
    summary: Dict[str, Any] = {
        "n": n, "f": fs.f, "scheme": fs.scheme, "pair_mode": loss_cfg.mode,
        "best_restart": result.best_restart + 1,
        "loss": result.breakdown.as_dict(),
        "restarts": [
            {"restart": r.restart + 1, "final_loss": r.final_loss if not r.diverged else None,
             "epochs": r.epochs, "diverged": r.diverged, "message": r.message}
            for r in result.restarts
        ],
    }
    if cfg.truth:
        truth = read_truth(cfg.truth)
        summary["ari"] = adjusted_rand_index(hard_partition(partition), truth)
        log.info(f"ARI against {cfg.truth}: {summary['ari']:.4f}")
    write_json(summary, out_dir / SUMMARY_NAME)
    cfg.save(out_dir / "config.json")

    log.info("--- Fit complete ---")
    log.info(f"Final loss:  {result.breakdown.total:.6g}")
    log.info(f"Outputs in:  {out_dir}")
    return FitOutputs(model=model, partition=partition, result=result, out_dir=out_dir)


# --- Predict ---

def _raw_inputs(model: EvclusModel, path) -> np.ndarray:
    if model.mode == "relational":
        return read_matrix(path)
    X, _ = read_attributes(path)
    return X


def run_predict(bundle_path, input_path, output_path) -> EvidentialPartition:
    model = load_bundle(bundle_path)
    raw = _raw_inputs(model, input_path)
    if raw.shape[0] == 0:
        log.warning(f"No objects in {input_path}; writing an empty partition")
        partition = empty_partition(model.fs)
    else:
        if raw.shape[1] != model.input_width:
            raise ValidationError(f"Input rows have {raw.shape[1]} columns; the model expects {model.input_width}")
        partition = predict(model, model.attributes(raw))
    write_partition(partition, output_path)
    return partition


# --- Evaluate ---

def run_evaluate(
    partition_path,
    truth_path,
    report_path,
    bundle_path=None,
    data_path=None,
    dissimilarity_path=None
) -> EvalReport:
    table = read_partition(partition_path)
    truth = read_truth(truth_path)
    if len(truth) != len(table):
        raise ValidationError(f"Partition has {len(table)} objects but the truth file has {len(truth)}")
    report = EvalReport(
        ari=adjusted_rand_index(table["label"].to_numpy(), truth),
        final_loss=None,
        outlier_count=int(table["outlier"].sum()) if "outlier" in table.columns else 0,
        n_objects=len(table),
    )
    log.info(f"ARI: {report.ari:.4f}")

    if bundle_path is not None and data_path is not None:
        model = load_bundle(bundle_path)
        masses = table[[c for c in table.columns if c.startswith("m_")]].to_numpy(dtype=np.float64)
        ep = EvidentialPartition(model.fs, masses)
        raw = _raw_inputs(model, data_path)
        if raw.shape[0] != ep.n:
            raise ValidationError(f"{raw.shape[0]} objects in {data_path} but {ep.n} in the partition")
        D = _evaluation_dissimilarities(model, raw, dissimilarity_path)
        view = phi_transform(D, calibration=(model.d0, model.gamma_phi))
        scored = evaluate_partition(ep, view=view)
        report.final_loss = scored.final_loss
        report.shepard_pairs = scored.shepard_pairs
        shepard_path = Path(report_path).with_name("shepard.csv")
        write_table(shepard_table(ep, view), shepard_path)
        report.shepard_path = str(shepard_path)
        if dissimilarity_path is not None:
            report.holdout_loss = holdout_loss(model, raw, D)

    report.save(report_path)
    return report


def _evaluation_dissimilarities(model: EvclusModel, raw: np.ndarray, dissimilarity_path) -> np.ndarray:
    """Dissimilarities among the partitioned objects, as fit would have built them."""
    if dissimilarity_path is None:
        if model.mode == "relational":
            raise ValidationError("Relational evaluation needs --dissimilarities among the partitioned objects")
        return euclidean_distances(raw)
    D = read_dissimilarities(dissimilarity_path)
    if D.shape[0] != raw.shape[0]:
        raise ValidationError(f"{D.shape[0]} objects in {dissimilarity_path} but {raw.shape[0]} in the data")
    return symmetrize(D) if model.mode == "relational" else D


# --- Gradient check ---

def run_gradcheck(cfg: RunConfig, args: argparse.Namespace) -> bool:
    gate = cfg.svm_enabled if args.gate is None else args.gate
    hidden = cfg.hidden_units or [3]
    all_passed = True
    reports: List[Dict[str, Any]] = []
    for k in range(args.instances):
        instance = gradcheck_instance(
            n=args.n, d=args.d, hidden_units=hidden, clusters=cfg.clusters, scheme=cfg.scheme,
            gate=gate, constraints=args.with_constraints, labels=args.with_labels,
            lam=cfg.lam, xi=cfg.xi or 0.5, nu=cfg.nu or 0.3, seed=cfg.seed + k,
        )
        report = grad_check(instance.objective, instance.params, fault=args.inject_fault)
        all_passed &= report.passed
        for block in report.worst():
            log.info(f"  instance {k + 1} block {block.name:>4}: max relative error {block.max_relative_error:.3e} "
                     f"at {block.worst_index} (analytic {block.analytic:.6g}, numeric {block.numeric:.6g})")
        if report.failing():
            log.error(f"Instance {k + 1}: gradient check failed for blocks {report.failing()}")
        reports.append({
            "instance": k + 1, "passed": report.passed, "max_error": report.max_error,
            "blocks": {b.name: b.max_relative_error for b in report.blocks},
        })
    write_json({"tolerance": GRAD_TOLERANCE, "passed": all_passed, "instances": reports},
               Path(cfg.out) / "gradcheck.json")
    return all_passed


# --- Entry point ---

def main(argv: Optional[List[str]] = None) -> int:
    parser = setup_argparse()
    args = parser.parse_args(argv)

    if args.verb == "version":
        print(f"evclus-nn {VERSION}")
        return EXIT_OK

    setup_logging(verbose=args.verbose, quiet=args.quiet)
    try:
        cfg = resolve_config(args)
        if args.verb == "fit":
            run_fit(cfg)
        elif args.verb == "predict":
            output = args.output or str(Path(cfg.out) / "predictions.csv")
            run_predict(args.bundle, args.input, output)
        elif args.verb == "evaluate":
            report_path = args.report or str(Path(cfg.out) / "eval_report.json")
            run_evaluate(args.partition, args.truth, report_path, args.bundle, args.data, args.dissimilarities)
        elif args.verb == "gradcheck":
            if not run_gradcheck(cfg, args):
                return EXIT_VALIDATION
    except (DataFormatError, BundleError, OSError) as e:
        log.error(f"{e}")
        return EXIT_IO
    except EvclusError as e:
        log.error(f"{e}")
        return EXIT_VALIDATION
    return EXIT_OK


# --- Script Entry Point ---
if __name__ == "__main__":
    sys.exit(main())
