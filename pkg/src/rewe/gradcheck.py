"""Gradient-integrity harness: every primitive plus the full combined loss.

Each primitive is exercised on random small-shape instances and its analytic
gradient compared against central finite differences (64-bit, step 1e-5).
The full-model case runs the combined objective on a one-sentence batch at
tiny dimensions and checks every parameter leaf.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Graph, grad_check
from .data import Vocabulary, pack_batch, random_embeddings
from .losses import combined_loss, nll_loss, rewe_loss
from .model import Seq2SeqModel, forward_teacher_forced
from .seeding import derive_seed

PRIMITIVE_CASES = (
    "add", "add_broadcast", "sub", "mul", "mul_broadcast", "div",
    "scalar_mul", "scalar_add", "matmul", "concat", "slice", "reshape",
    "tanh", "sigmoid", "relu", "log", "sqrt", "clamp_min", "softmax",
    "masked_softmax", "embedding", "pick", "dropout", "sum", "mean",
)


def build_primitive_instance(rng: np.random.Generator, case: str):
    """One random scalar-rooted graph exercising a single primitive."""
    g = Graph(seed=int(rng.integers(1 << 30)))

    def leaf(*shape, positive=False):
        v = rng.normal(size=shape)
        if positive:
            v = np.abs(v) + 0.5
        return g.leaf(v)

    if case == "add":
        out = leaf(3, 4) + leaf(3, 4)
    elif case == "add_broadcast":
        out = leaf(2, 3, 4) + leaf(2, 1, 4)
    elif case == "sub":
        out = leaf(3, 4) - leaf(3, 4)
    elif case == "mul":
        out = leaf(3, 4) * leaf(3, 4)
    elif case == "mul_broadcast":
        out = leaf(3, 4) * leaf(4)
    elif case == "div":
        out = leaf(3, 4) / leaf(3, 4, positive=True)
    elif case == "scalar_mul":
        out = leaf(3, 4) * float(rng.normal())
    elif case == "scalar_add":
        out = leaf(3, 4) + float(rng.normal())
    elif case == "matmul":
        out = leaf(3, 4) @ leaf(4, 2)
    elif case == "concat":
        out = ad.concat([leaf(2, 3), leaf(2, 2)], axis=1)
    elif case == "slice":
        out = leaf(4, 6)[1:3, 2:5]
    elif case == "reshape":
        out = leaf(3, 4).reshape((2, 6))
    elif case == "tanh":
        out = leaf(3, 4).tanh()
    elif case == "sigmoid":
        out = leaf(3, 4).sigmoid()
    elif case == "relu":
        out = leaf(3, 4).relu()
    elif case == "log":
        out = leaf(3, 4, positive=True).log()
    elif case == "sqrt":
        out = leaf(3, 4, positive=True).sqrt()
    elif case == "clamp_min":
        out = leaf(3, 4).clamp_min(0.2)
    elif case == "softmax":
        out = ad.softmax(leaf(3, 5))
    elif case == "masked_softmax":
        x = leaf(3, 5)
        mask = rng.random((3, 5)) < 0.7
        mask[:, 0] = True
        out = ad.softmax(x, mask=mask)
    elif case == "embedding":
        out = ad.embedding(leaf(6, 3), rng.integers(0, 6, size=(2, 4)))
    elif case == "pick":
        out = ad.pick(leaf(5, 4), rng.integers(0, 4, size=5))
    elif case == "dropout":
        out = ad.dropout(leaf(4, 4), keep_prob=0.6)
    elif case == "sum":
        out = leaf(2, 3, 4).sum(axis=1)
    elif case == "mean":
        out = leaf(2, 3, 4).mean(axis=2, keepdims=True)
    else:
        raise ValueError(f"unknown gradcheck case {case!r}")

    leaves = {f"leaf{i}": n for i, n in enumerate(g.nodes)
              if n.backward_rule == "leaf"}
    weight = g.constant(rng.normal(size=out.shape))
    return (out * weight).sum(), leaves


def build_full_model_case(seed: int, loss_kind: str = "cel", lam: float = 1.7):
    """Combined loss on a one-sentence batch, tiny dims (H=8, E=6, M=4, V=11)."""
    model = Seq2SeqModel(src_vocab_size=9, tgt_vocab_size=11, hidden_size=8,
                         emb_dim=6, rewe_mid_dim=4, dropout=0.0, seed=seed)
    batch = pack_batch([([4, 5, 6], [4, 7])])
    vocab = Vocabulary([f"t{i}" for i in range(7)], 100)
    table = random_embeddings(vocab, 6, seed=seed + 1)

    def build():
        graph = Graph(seed=0)
        fwd = forward_teacher_forced(model, graph, batch, train_mode=True)
        nll = nll_loss(graph, fwd.probs_steps, batch.tgt_out, batch.out_mask)
        reg = rewe_loss(graph, fwd.rewe_steps, batch.tgt_out, batch.out_mask,
                        table, loss_kind)
        bd = combined_loss(nll, reg, lam, int(batch.out_mask.sum()))
        return bd.total_node, fwd.bound

    return build


@dataclass
class GradcheckCaseResult:
    name: str
    max_rel_err: float
    ok: bool


@dataclass
class GradcheckRunReport:
    cases: list[GradcheckCaseResult]
    tol: float

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.cases)

    @property
    def max_rel_err(self) -> float:
        return max(c.max_rel_err for c in self.cases)

    def lines(self):
        for c in self.cases:
            yield f"{'PASS' if c.ok else 'FAIL'} {c.name}: max_rel_err={c.max_rel_err:.3e}"
        yield (f"{'PASS' if self.ok else 'FAIL'} overall: "
               f"max_rel_err={self.max_rel_err:.3e} (tol {self.tol:g})")


def run_gradcheck(seed: int = 7, instances_per_primitive: int = 20,
                  step: float = 1e-5, tol: float = 1e-4) -> GradcheckRunReport:
    results = []
    for case in PRIMITIVE_CASES:
        rng = np.random.default_rng(derive_seed(seed, case))
        worst = 0.0
        ok = True
        for _ in range(instances_per_primitive):
            holder = [None]

            def build():
                if holder[0] is None:
                    holder[0] = build_primitive_instance(rng, case)
                return holder[0]

            report = grad_check(build, step=step, tol=tol)
            worst = max(worst, report.max_rel_err)
            ok = ok and report.ok
        results.append(GradcheckCaseResult(f"primitive/{case}", worst, ok))

    for kind in ("cel", "mse"):
        report = grad_check(build_full_model_case(seed, loss_kind=kind),
                            step=step, tol=tol)
        results.append(GradcheckCaseResult(
            f"full_model/{kind}", report.max_rel_err, report.ok))
    return GradcheckRunReport(cases=results, tol=tol)
