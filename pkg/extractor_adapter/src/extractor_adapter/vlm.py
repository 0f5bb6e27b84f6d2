"""Vision-language generation backends.

A VLM backend answers ``generate(image_path, prompt)`` with the generated
text and the final-layer hidden state at the last output token (the
end-of-sequence position), which doubles as the item's embedding.

The HuggingFace backend decodes greedily for reproducible answers. The
stub backend fabricates template-shaped answers deterministically from the
item image bytes, with a small imperfection rate so downstream parsers see
realistic drift.
"""

from __future__ import annotations

import hashlib
import logging
from pathlib import Path

import numpy as np

from .backends import _hash_vector
from .prompts import prompt_slots

logger = logging.getLogger(__name__)

_WORDS = (
    "amber basil cedar delta ember fern garnet hazel iris jade koa lotus "
    "maple nectar olive pearl quartz rosin sage teak umber velvet willow "
    "zephyr aspen birch clover dahlia elm foxglove"
).split()


class StubVLMBackend:
    """Deterministic structured answers keyed by the image bytes.

    Roughly 2% of items lose one slot and 1% come back as free prose, so a
    hundred-item sample exercises the lenient parsing downstream.
    """

    name = "stub-vlm"

    def __init__(self, dim: int = 64, miss_rate: float = 0.02, garbage_rate: float = 0.01):
        self.dim = dim
        self.miss_rate = miss_rate
        self.garbage_rate = garbage_rate

    def generate(self, image_path: str, prompt: str) -> tuple[str, np.ndarray]:
        payload = Path(image_path).read_bytes()
        digest = hashlib.sha256(payload).digest()
        rng = np.random.default_rng(np.frombuffer(digest[:16], dtype=np.uint64))
        slots = prompt_slots(prompt)
        roll = rng.random()
        if roll < self.garbage_rate:
            text = "I could not identify clear attributes for this product image."
        else:
            parts = []
            skip = rng.integers(len(slots)) if roll < self.garbage_rate + self.miss_rate else -1
            for idx, slot in enumerate(slots):
                if idx == skip:
                    continue
                word = _WORDS[int(rng.integers(len(_WORDS)))]
                parts.append(f"[{slot}] {{{word.capitalize()}}}")
            text = ", ".join(parts)
        return text, _hash_vector(payload, self.dim, salt="vlm")


class HFVLMBackend:
    """HuggingFace vision-language model with greedy decoding.

    The embedding is the final hidden layer's state at the last generated
    token. Requires the checkpoint locally or via the hub.
    """

    def __init__(self, checkpoint: str, device: str = "cpu", max_new_tokens: int = 96):
        from transformers import AutoModelForVision2Seq, AutoProcessor

        self._processor = AutoProcessor.from_pretrained(checkpoint, trust_remote_code=True)
        self._model = (
            AutoModelForVision2Seq.from_pretrained(checkpoint, trust_remote_code=True)
            .eval()
            .to(device)
        )
        self._device = device
        self.max_new_tokens = max_new_tokens

    def generate(self, image_path: str, prompt: str) -> tuple[str, np.ndarray]:
        import torch
        from PIL import Image

        image = Image.open(image_path).convert("RGB")
        inputs = self._processor(images=image, text=prompt, return_tensors="pt").to(
            self._device
        )
        with torch.inference_mode():
            out = self._model.generate(
                **inputs,
                do_sample=False,
                max_new_tokens=self.max_new_tokens,
                output_hidden_states=True,
                return_dict_in_generate=True,
            )
        sequence = out.sequences[0]
        prompt_len = inputs["input_ids"].shape[1]
        text = self._processor.batch_decode(
            sequence[prompt_len:].unsqueeze(0), skip_special_tokens=True
        )[0].strip()
        # hidden_states: one tuple per generated step; take the final layer
        # at the last step, i.e. the end-of-sequence position.
        last_step = out.hidden_states[-1]
        embedding = last_step[-1][0, -1].float().cpu().numpy()
        return text, embedding.astype(np.float32)


def make_vlm_backend(model: str, device: str = "cpu", **options):
    if model == "stub-vlm":
        keys = ("dim", "miss_rate", "garbage_rate")
        return StubVLMBackend(**{k: options[k] for k in keys if k in options})
    if model.startswith("hf:"):
        return HFVLMBackend(model[3:], device=device, **{
            k: v for k, v in options.items() if k == "max_new_tokens"
        })
    raise ValueError(f"unknown VLM backend {model!r} (use 'stub-vlm' or 'hf:<checkpoint>')")
