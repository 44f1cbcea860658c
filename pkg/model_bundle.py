"""
Model bundle: one self-describing JSON file holding everything `predict`
needs. The payload is hashed (sha256 over its canonical JSON text) and the
digest stored next to it; loading refuses a bundle whose digest or format
version does not match.
"""
import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict

import numpy as np

from dissim import PcaEmbedding
from errors import BundleError, ValidationError
from focalsets import FocalSetStructure, Frame
from network import EvclusModel, NetworkParams
from ocsvm import OneClassSvm

log = logging.getLogger(__name__)

BUNDLE_FORMAT = "evclus-nn-bundle"
BUNDLE_VERSION = 1


def _canonical(payload: Dict[str, Any]) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def checksum(payload: Dict[str, Any]) -> str:
    return hashlib.sha256(_canonical(payload).encode("utf-8")).hexdigest()


def model_to_payload(model: EvclusModel) -> Dict[str, Any]:
    params = model.params
    payload = {
        "frame": {"c": model.fs.c},
        "scheme": model.fs.scheme,
        "subsets": list(model.fs.subsets),
        "dims": {"d": params.d, "hidden_units": params.hidden_units, "f": params.f},
        "weights": {
            "hidden": [V.tolist() for V in params.hidden],
            "W": params.W.tolist(),
        },
        "gate": {"beta0": params.beta0, "beta1": params.beta1},
        "phi": {"gamma": model.gamma_phi, "d0": model.d0},
        "mode": model.mode,
        "svm": None,
        "pca": None,
        "metadata": model.metadata,
    }
    if model.svm is not None:
        svm = model.svm
        payload["svm"] = {
            "support_vectors": svm.support_vectors.tolist(),
            "alphas": svm.alphas.tolist(),
            "offset": svm.offset,
            "sigma": svm.sigma,
            "nu": svm.nu,
        }
    if model.pca is not None:
        payload["pca"] = {
            "mean_row": model.pca.mean_row.tolist(),
            "projection": model.pca.projection.tolist(),
            "eigenvalues": model.pca.eigenvalues.tolist(),
        }
    return payload


def payload_to_model(payload: Dict[str, Any]) -> EvclusModel:
    try:
        frame = Frame(int(payload["frame"]["c"]))
        fs = FocalSetStructure(frame, payload["subsets"], scheme=payload["scheme"])
        hidden = [np.asarray(V, dtype=np.float64) for V in payload["weights"]["hidden"]]
        W = np.asarray(payload["weights"]["W"], dtype=np.float64)
        params = NetworkParams(hidden, W, float(payload["gate"]["beta0"]), float(payload["gate"]["beta1"]))
        params.check_finite()

        svm = None
        if payload["svm"] is not None:
            s = payload["svm"]
            svm = OneClassSvm(
                support_vectors=np.asarray(s["support_vectors"], dtype=np.float64),
                alphas=np.asarray(s["alphas"], dtype=np.float64),
                offset=float(s["offset"]), sigma=float(s["sigma"]), nu=float(s["nu"]),
            )
        pca = None
        if payload["pca"] is not None:
            p = payload["pca"]
            pca = PcaEmbedding(
                mean_row=np.asarray(p["mean_row"], dtype=np.float64),
                projection=np.asarray(p["projection"], dtype=np.float64).reshape(len(p["mean_row"]), -1),
                eigenvalues=np.asarray(p["eigenvalues"], dtype=np.float64),
            )
        model = EvclusModel(
            fs=fs, params=params,
            gamma_phi=float(payload["phi"]["gamma"]), d0=float(payload["phi"]["d0"]),
            svm=svm, pca=pca, mode=payload["mode"], metadata=payload.get("metadata", {}),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise BundleError(f"Malformed bundle payload: {e}") from e

    dims = payload["dims"]
    if params.d != dims["d"] or params.f != dims["f"] or params.f != fs.f:
        raise BundleError("Bundle dimensions do not match its weights")
    return model


def save_bundle(model: EvclusModel, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = model_to_payload(model)
    document = {
        "format": BUNDLE_FORMAT,
        "version": BUNDLE_VERSION,
        "checksum": checksum(payload),
        "payload": payload,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f)
    log.info(f"Model bundle written to {path}")
    return path


def load_bundle(path) -> EvclusModel:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            document = json.load(f)
    except json.JSONDecodeError as e:
        raise BundleError(f"{path} is not a valid bundle: {e}") from e

    if not isinstance(document, dict) or document.get("format") != BUNDLE_FORMAT:
        raise BundleError(f"{path} is not an {BUNDLE_FORMAT} file")
    if document.get("version") != BUNDLE_VERSION:
        raise BundleError(f"{path} has bundle version {document.get('version')}; expected {BUNDLE_VERSION}")
    payload = document.get("payload")
    if not isinstance(payload, dict) or checksum(payload) != document.get("checksum"):
        raise BundleError(f"{path} failed its integrity check")

    try:
        model = payload_to_model(payload)
    except ValidationError as e:
        raise BundleError(f"{path}: {e}") from e
    log.info(f"Loaded model bundle {path} (c={model.fs.c}, f={model.fs.f}, mode={model.mode})")
    return model
