"""Match-head checkpoint container: named float32 arrays + JSON meta."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from bevground.baseline import MatchHead
from bevground.text import EncoderSpec


def save_match_head(path, head: MatchHead, encoder_spec: EncoderSpec, d_obj: int) -> None:
    arrays = {
        f"param/{name}": t.detach().cpu().numpy().astype("<f4")
        for name, t in head.state_dict().items()
    }
    meta = {
        "d_text": encoder_spec.dim,
        "d_obj": d_obj,
        "hidden": head.lang_mlp[0].out_features,
        "d_match": head.lang_mlp[2].out_features,
        "encoder": {"name": encoder_spec.name, "dim": encoder_spec.dim,
                    "seed": encoder_spec.seed, "vocab_path": encoder_spec.vocab_path},
    }
    arrays["meta_json"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8).copy()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_match_head(path):
    """Returns (head, encoder_spec, d_obj)."""
    with np.load(path, allow_pickle=False) as blob:
        arrays = {k: blob[k] for k in blob.files}
    meta = json.loads(bytes(arrays["meta_json"]).decode("utf-8"))
    head = MatchHead(meta["d_text"], meta["d_obj"], meta["hidden"], meta["d_match"])
    state = {k[len("param/"):]: torch.from_numpy(v.copy()) for k, v in arrays.items()
             if k.startswith("param/")}
    head.load_state_dict(state)
    enc = meta["encoder"]
    spec = EncoderSpec(name=enc["name"], dim=enc["dim"], seed=enc["seed"],
                       vocab_path=enc.get("vocab_path"))
    return head, spec, meta["d_obj"]
