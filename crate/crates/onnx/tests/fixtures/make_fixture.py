"""Builds the tiny NLI fixture used by the ONNX backend tests.

Writes tiny_nli.onnx, tokenizer.json, manifest.json and reference.json next
to this script. The model is a bag-of-embeddings classifier with random
weights: it only has to exercise the same input/output contract as a real
exported checkpoint.

    python3 make_fixture.py
"""

import hashlib
import json
from pathlib import Path

import torch
from tokenizers import Tokenizer, models, normalizers, pre_tokenizers, processors

HERE = Path(__file__).resolve().parent
WORDS = (
    "police killed arrested someone there is a protest the crowd marched "
    "against new law officers fired on people in city yesterday strong "
    "complaint expressing disagreement failed to have an effect used force "
    "workers gathered outside"
).split()
SPECIALS = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"]
MAX_TOKENS = 64
PAIRS = [
    ["Police killed someone in the city yesterday.", "Police killed someone."],
    ["The crowd marched against the new law.", "There is a protest."],
    ["Workers gathered outside.", "Police arrested someone."],
    ["Officers fired on people.", "Police used force."],
    ["unseen words here", "There is a protest."],
]


def build_tokenizer():
    vocab = {tok: i for i, tok in enumerate(SPECIALS)}
    for w in WORDS:
        vocab.setdefault(w, len(vocab))
    tok = Tokenizer(models.WordLevel(vocab=vocab, unk_token="[UNK]"))
    tok.normalizer = normalizers.Lowercase()
    tok.pre_tokenizer = pre_tokenizers.Sequence(
        [pre_tokenizers.Whitespace(), pre_tokenizers.Punctuation()]
    )
    tok.post_processor = processors.TemplateProcessing(
        single="[CLS] $A [SEP]",
        pair="[CLS] $A [SEP] $B:1 [SEP]:1",
        special_tokens=[("[CLS]", vocab["[CLS]"]), ("[SEP]", vocab["[SEP]"])],
    )
    return tok, len(vocab)


class TinyNli(torch.nn.Module):
    def __init__(self, vocab_size):
        super().__init__()
        self.embed = torch.nn.Embedding(vocab_size, 16)
        self.segment = torch.nn.Embedding(2, 16)
        self.head = torch.nn.Linear(16, 3)

    def forward(self, input_ids, attention_mask, token_type_ids):
        h = torch.tanh(self.embed(input_ids) + self.segment(token_type_ids))
        mask = attention_mask.unsqueeze(-1).to(h.dtype)
        pooled = (h * mask).sum(1) / mask.sum(1).clamp(min=1.0)
        return self.head(pooled)


def sha256(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def main():
    torch.manual_seed(7)
    tok, vocab_size = build_tokenizer()
    tok.save(str(HERE / "tokenizer.json"))
    model = TinyNli(vocab_size).eval()

    onnx_path = HERE / "tiny_nli.onnx"
    dummy = tok.encode("police killed someone", "there is a protest")
    ids = torch.tensor([dummy.ids])
    torch.onnx.export(
        model,
        (ids, torch.ones_like(ids), torch.tensor([dummy.type_ids])),
        str(onnx_path),
        input_names=["input_ids", "attention_mask", "token_type_ids"],
        output_names=["logits"],
        dynamic_axes={
            "input_ids": {0: "batch", 1: "seq"},
            "attention_mask": {0: "batch", 1: "seq"},
            "token_type_ids": {0: "batch", 1: "seq"},
            "logits": {0: "batch"},
        },
        opset_version=14,
        dynamo=False,
    )

    reference = []
    with torch.no_grad():
        for premise, hypothesis in PAIRS:
            enc = tok.encode(premise, hypothesis)
            ids = torch.tensor([enc.ids])
            logits = model(ids, torch.ones_like(ids), torch.tensor([enc.type_ids]))[0]
            probs = torch.softmax(logits.double(), -1)
            reference.append(
                {
                    "premise": premise,
                    "hypothesis": hypothesis,
                    "input_ids": enc.ids,
                    "logits": logits.tolist(),
                    "probabilities": probs.tolist(),
                }
            )
    (HERE / "reference.json").write_text(json.dumps(reference, indent=2) + "\n")

    manifest = {
        "backend_id": "tiny-nli",
        "source_checkpoint": "synthetic/tiny-nli",
        "revision": "fixture",
        "model_file": onnx_path.name,
        "model_sha256": sha256(onnx_path),
        "tokenizer_file": "tokenizer.json",
        "tokenizer_sha256": sha256(HERE / "tokenizer.json"),
        "label_order": ["contradiction", "neutral", "entailment"],
        "max_tokens": MAX_TOKENS,
    }
    (HERE / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


if __name__ == "__main__":
    main()
