"""Pointer-network constraint generation policy

An encoder over the primitives of a sketch (a set, no positional
encoding) and an autoregressive decoder over constraint tokens. Type and
EOS logits come from a linear head, reference logits from scaled
dot-product attention of the decoder state against the encoder outputs.
The input embedding of a REF token is the encoder output of the
referenced primitive, which makes sequence log-probabilities invariant
under a relabeling of the primitives.
"""

__docformat__ = 'restructuredtext'

import copy
import json
import logging
import math
from dataclasses import (
    asdict,
    dataclass,
    fields,
)
from pathlib import Path
from typing import (
    Callable,
    Dict,
    List,
    Optional,
    Sequence,
    Tuple,
)

import numpy as np
import torch
from torch import nn
from torch.nn.utils import (
    parameters_to_vector,
    vector_to_parameters,
)

from .exceptions import (
    NonFinite,
    SketchalignError,
    StructurallyInvalid,
)
from .sketch import Sketch
from .tokenizer import (
    COORD_BINS,
    SAMPLE_POINTS,
    VOCAB,
    GrammarState,
    allowed_tokens,
    encode_geometry,
)
from .utils import obtain

lgr = logging.getLogger('datalad.ext.sketchalign.policy')

DTYPE = torch.float64
CHECKPOINT_MAGIC = b'SKALPOL1'
# rows of the decoder token embedding: all output tokens below the REF
# range, plus one shared row for every REF token
_N_TOKEN_ROWS = VOCAB.ref_offset + 1
_N_COORD_SLOTS = 2 * SAMPLE_POINTS


@dataclass(frozen=True)
class PolicyConfig:
    embed_dim: int = 128
    encoder_layers: int = 2
    decoder_layers: int = 2
    heads: int = 4
    feedforward_dim: int = 256
    max_seq_len: int = 1 + 64 * 3 + 1
    seed: int = 0

    def __post_init__(self):
        if self.embed_dim % self.heads:
            raise ValueError(
                f'embed_dim {self.embed_dim} is not divisible by '
                f'{self.heads} heads')
        if self.max_seq_len < 2:
            raise ValueError('max_seq_len must allow SOS and EOS')

    @classmethod
    def from_config(cls, overrides: Optional[Dict] = None) -> 'PolicyConfig':
        return cls(**{
            f.name: obtain(f"policy.{f.name.replace('_', '-')}", overrides)
            for f in fields(cls)
        })

    def to_json(self) -> dict:
        return asdict(self)


class ConstraintPolicy(nn.Module):
    """Policy network; ``version`` counts applied parameter updates"""
    def __init__(self, config: PolicyConfig):
        super().__init__()
        self.config = config
        self.version = 0
        d = config.embed_dim
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.seed)
            self.kind_embedding = nn.Embedding(len(VOCAB.primitive_kinds), d)
            self.fixed_embedding = nn.Embedding(2, d)
            # one table per (sample point, axis) slot
            self.coord_embedding = nn.Embedding(
                _N_COORD_SLOTS * COORD_BINS, d)
            self.encoder = nn.TransformerEncoder(
                nn.TransformerEncoderLayer(
                    d, config.heads, config.feedforward_dim, dropout=0.0,
                    batch_first=True),
                config.encoder_layers,
                enable_nested_tensor=False,
            )
            self.token_embedding = nn.Embedding(_N_TOKEN_ROWS, d)
            self.position_embedding = nn.Embedding(config.max_seq_len, d)
            self.decoder = nn.TransformerDecoder(
                nn.TransformerDecoderLayer(
                    d, config.heads, config.feedforward_dim, dropout=0.0,
                    batch_first=True),
                config.decoder_layers,
            )
            # EOS + one logit per constraint kind
            self.type_head = nn.Linear(d, 1 + len(VOCAB.kinds))
            self.pointer_query = nn.Linear(d, d, bias=False)
            with torch.no_grad():
                # near-uniform reference distribution at initialization
                self.pointer_query.weight.mul_(0.01)
        self.to(DTYPE)

    @property
    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def encode(self, geometry: torch.Tensor,
               padding: torch.Tensor) -> torch.Tensor:
        """Per-primitive embeddings of geometry token rows

        ``geometry`` is (B, n, 12) as produced by `encode_geometry`,
        ``padding`` is (B, n) and True for padded primitive slots.
        """
        kinds = geometry[..., 0] - VOCAB.primitive_offset
        fixed = geometry[..., 1] - VOCAB.fixed_offset
        coords = geometry[..., 2:]
        offsets = torch.tensor(
            [VOCAB.xbin_offset, VOCAB.ybin_offset] * SAMPLE_POINTS,
            dtype=torch.long)
        slots = torch.arange(_N_COORD_SLOTS, dtype=torch.long) * COORD_BINS
        coord_index = coords - offsets + slots
        x = self.kind_embedding(kinds) \
            + self.fixed_embedding(fixed) \
            + self.coord_embedding(coord_index).sum(dim=-2)
        return self.encoder(x, src_key_padding_mask=padding)

    def decode(self, memory: torch.Tensor, padding: torch.Tensor,
               tokens: torch.Tensor) -> torch.Tensor:
        """Decoder states for a (B, T) token prefix"""
        T = tokens.shape[1]
        is_ref = tokens >= VOCAB.ref_offset
        rows = torch.where(
            is_ref, torch.full_like(tokens, VOCAB.ref_offset), tokens)
        ref_index = (tokens - VOCAB.ref_offset).clamp(
            0, memory.shape[1] - 1)
        referenced = memory.gather(
            1, ref_index.unsqueeze(-1).expand(-1, -1, memory.shape[-1]))
        x = self.token_embedding(rows) \
            + self.position_embedding(torch.arange(T)) \
            + referenced * is_ref.unsqueeze(-1)
        causal = torch.triu(torch.ones(T, T, dtype=torch.bool), diagonal=1)
        return self.decoder(
            x, memory, tgt_mask=causal, memory_key_padding_mask=padding)

    def logits(self, states: torch.Tensor, memory: torch.Tensor,
               padding: torch.Tensor) -> torch.Tensor:
        """Unmasked logits over the output vocabulary, (B, T, V)"""
        B, T, _ = states.shape
        n = memory.shape[1]
        head = self.type_head(states)
        pointer = self.pointer_query(states) @ memory.transpose(1, 2) \
            / math.sqrt(self.config.embed_dim)
        pointer = pointer.masked_fill(padding.unsqueeze(1), -math.inf)
        blocked = states.new_full((B, T, VOCAB.EOS), -math.inf)
        unused = states.new_full((B, T, VOCAB.n_refs - n), -math.inf)
        return torch.cat([blocked, head, pointer, unused], dim=-1)


def snapshot(policy: ConstraintPolicy) -> ConstraintPolicy:
    """Frozen copy, e.g. of the reference policy"""
    ref = copy.deepcopy(policy)
    for p in ref.parameters():
        p.requires_grad_(False)
    return ref


def geometry_batch(
        sketches: Sequence[Sketch]) -> Tuple[torch.Tensor, torch.Tensor]:
    """Padded geometry tokens and the padding mask of several sketches"""
    rows = [encode_geometry(s) for s in sketches]
    n = max(len(r) for r in rows)
    pad_row = np.array(
        [VOCAB.primitive_offset, VOCAB.fixed_offset]
        + [VOCAB.xbin_offset, VOCAB.ybin_offset] * SAMPLE_POINTS,
        dtype=np.int64)
    geometry = np.tile(pad_row, (len(rows), n, 1))
    padding = np.ones((len(rows), n), dtype=bool)
    for b, r in enumerate(rows):
        geometry[b, :len(r)] = r
        padding[b, :len(r)] = False
    return torch.from_numpy(geometry), torch.from_numpy(padding)


def _masked_logprobs(logits: torch.Tensor,
                     allowed: torch.Tensor) -> torch.Tensor:
    return torch.log_softmax(
        logits.masked_fill(~allowed, -math.inf), dim=-1)


def next_token_dist(policy: ConstraintPolicy, memory: torch.Tensor,
                    padding: torch.Tensor, prefix: Sequence[int],
                    state: GrammarState) -> torch.Tensor:
    """Probabilities of the next token of a single prefix"""
    n = int((~padding[0]).sum())
    with torch.no_grad():
        h = policy.decode(memory, padding, torch.tensor([list(prefix)]))
        logits = policy.logits(h[:, -1:], memory, padding)[0, 0]
        allowed = torch.from_numpy(allowed_tokens(state, n))
        return torch.exp(_masked_logprobs(logits, allowed))


def _top_p_filter(probs: torch.Tensor, top_p: float) -> torch.Tensor:
    """Keep the smallest set of most likely tokens with mass >= top_p"""
    if top_p >= 1.0:
        return probs
    sorted_probs, order = torch.sort(probs, dim=-1, descending=True)
    before = torch.cumsum(sorted_probs, dim=-1) - sorted_probs
    keep_sorted = before < top_p
    keep = torch.zeros_like(keep_sorted).scatter(-1, order, keep_sorted)
    filtered = probs * keep
    return filtered / filtered.sum(dim=-1, keepdim=True)


def sample_batch(
        policy: ConstraintPolicy,
        sketches: Sequence[Sketch],
        temperature: float = 1.0,
        top_p: float = 1.0,
        generator: Optional[torch.Generator] = None,
) -> List[Tuple[List[int], List[float]]]:
    """Ancestral sampling of one token sequence per sketch

    Returns the tokens and the per-token log-probabilities under the
    untempered, grammar-masked policy. ``temperature=0`` decodes greedily.
    Sequences end at EOS or after ``max_seq_len`` tokens.
    """
    if temperature < 0:
        raise ValueError('temperature must not be negative')
    if not 0 < top_p <= 1:
        raise ValueError('top_p must be in (0, 1]')
    B = len(sketches)
    if not B:
        return []
    n_prims = [len(s) for s in sketches]
    tokens = [[VOCAB.SOS] for _ in range(B)]
    logps = [[] for _ in range(B)]
    states = [GrammarState() for _ in range(B)]
    active = list(range(B))
    with torch.no_grad():
        geometry, padding = geometry_batch(sketches)
        memory = policy.encode(geometry, padding)
        for _ in range(policy.config.max_seq_len - 1):
            if not active:
                break
            idx = torch.tensor(active)
            mem, pad = memory[idx], padding[idx]
            h = policy.decode(
                mem, pad, torch.tensor([tokens[b] for b in active]))
            logits = policy.logits(h[:, -1:], mem, pad)[:, 0]
            allowed = torch.from_numpy(np.stack(
                [allowed_tokens(states[b], n_prims[b]) for b in active]))
            logp = _masked_logprobs(logits, allowed)
            if temperature == 0:
                choice = torch.argmax(logp, dim=-1)
            else:
                probs = torch.softmax(logp / temperature, dim=-1)
                probs = _top_p_filter(probs, top_p)
                choice = torch.multinomial(
                    probs, 1, generator=generator)[:, 0]
            still_active = []
            for row, b in enumerate(active):
                tok = int(choice[row])
                tokens[b].append(tok)
                logps[b].append(float(logp[row, tok]))
                states[b] = states[b].advance(tok, sketches[b].kinds)
                if not states[b].done:
                    still_active.append(b)
            active = still_active
    return list(zip(tokens, logps))


def sample_sequence(policy: ConstraintPolicy, sketch: Sketch,
                    temperature: float = 1.0, top_p: float = 1.0,
                    seed: int = 0) -> Tuple[List[int], List[float]]:
    g = torch.Generator().manual_seed(seed)
    return sample_batch(policy, [sketch], temperature, top_p, g)[0]


def greedy_sequence(policy: ConstraintPolicy, sketch: Sketch) -> List[int]:
    return sample_batch(policy, [sketch], temperature=0.0)[0][0]


def _replay_masks(tokens: Sequence[int], sketch: Sketch,
                  length: int) -> np.ndarray:
    """Grammar masks of every scored position of a token sequence

    Positions beyond the sequence only allow EOS, which keeps their
    log-probabilities finite.
    """
    masks = np.zeros((length, VOCAB.output_size), dtype=bool)
    masks[:, VOCAB.EOS] = True
    if not tokens or tokens[0] != VOCAB.SOS:
        raise StructurallyInvalid('token sequence must start with SOS')
    state = GrammarState()
    for t, tok in enumerate(tokens[1:]):
        masks[t] = allowed_tokens(state, len(sketch))
        if not masks[t, tok]:
            raise StructurallyInvalid(
                f'{VOCAB.name(tok)} not allowed at position {t + 1}')
        try:
            state = state.advance(tok, sketch.kinds)
        except SketchalignError as e:
            raise StructurallyInvalid(str(e)) from e
    return masks


def token_logprobs(
        policy: ConstraintPolicy,
        sketches: Sequence[Sketch],
        token_lists: Sequence[Sequence[int]],
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Differentiable per-token log-probabilities of given sequences

    Returns (B, L) log-probabilities (0 beyond a sequence) and the (B, L)
    boolean mask of scored positions, L = longest sequence - 1.
    """
    B = len(token_lists)
    L = max(len(t) for t in token_lists) - 1
    inputs = np.full((B, L), VOCAB.PAD, dtype=np.int64)
    targets = np.full((B, L), VOCAB.EOS, dtype=np.int64)
    scored = np.zeros((B, L), dtype=bool)
    allowed = np.zeros((B, L, VOCAB.output_size), dtype=bool)
    for b, (toks, sketch) in enumerate(zip(token_lists, sketches)):
        toks = list(toks)
        k = len(toks) - 1
        inputs[b, :k] = toks[:-1]
        targets[b, :k] = toks[1:]
        scored[b, :k] = True
        allowed[b] = _replay_masks(toks, sketch, L)
    geometry, padding = geometry_batch(sketches)
    memory = policy.encode(geometry, padding)
    h = policy.decode(memory, padding, torch.from_numpy(inputs))
    logp = _masked_logprobs(
        policy.logits(h, memory, padding), torch.from_numpy(allowed))
    picked = logp.gather(-1, torch.from_numpy(targets).unsqueeze(-1))[..., 0]
    mask = torch.from_numpy(scored)
    return picked * mask, mask


def sequence_logprob(policy: ConstraintPolicy, sketch: Sketch,
                     tokens: Sequence[int]) -> Tuple[float, torch.Tensor]:
    """Total and per-token log-probability of one sequence"""
    with torch.no_grad():
        logp, _ = token_logprobs(policy, [sketch], [tokens])
    per_token = logp[0, :len(tokens) - 1]
    return float(per_token.sum()), per_token


def loss_and_grad(
        policy: ConstraintPolicy,
        loss_fn: Callable[[], torch.Tensor],
) -> Tuple[float, torch.Tensor]:
    """Evaluate a loss and its gradient as a flat parameter vector

    Raises `NonFinite` on NaN or Inf in loss or gradient.
    """
    policy.zero_grad(set_to_none=True)
    loss = loss_fn()
    if not torch.isfinite(loss):
        raise NonFinite(f'loss is {float(loss)}')
    if loss.requires_grad:
        loss.backward()
    grad = torch.cat([
        (p.grad if p.grad is not None else torch.zeros_like(p)).reshape(-1)
        for p in policy.parameters()])
    if not torch.isfinite(grad).all():
        raise NonFinite('gradient is not finite')
    return float(loss), grad


def make_optimizer(policy: ConstraintPolicy,
                   lr: float) -> torch.optim.Optimizer:
    return torch.optim.Adam(
        policy.parameters(), lr=lr, betas=(0.9, 0.999), eps=1e-8)


def apply_update(policy: ConstraintPolicy,
                 optimizer: torch.optim.Optimizer,
                 loss_fn: Callable[[], torch.Tensor]) -> float:
    """One optimizer step on ``loss_fn``; the gradient stays in ``.grad``"""
    loss, _ = loss_and_grad(policy, loss_fn)
    optimizer.step()
    policy.version += 1
    return loss


def save_checkpoint(policy: ConstraintPolicy, path: Path or str) -> None:
    """Write config header, version counter and float32 parameters

    Layout: magic, uint32 header length, JSON header, uint64 version,
    uint64 parameter count, little-endian float32 parameters.
    """
    header = json.dumps(
        policy.config.to_json(), sort_keys=True).encode('utf-8')
    flat = parameters_to_vector(policy.parameters()).detach() \
        .to(torch.float32).numpy().astype('<f4')
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('wb') as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(np.array([len(header)], dtype='<u4').tobytes())
        f.write(header)
        f.write(np.array([policy.version, flat.size], dtype='<u8').tobytes())
        f.write(flat.tobytes())


def load_checkpoint(path: Path or str) -> ConstraintPolicy:
    data = Path(path).read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f'{path} is not a policy checkpoint')
    pos = len(CHECKPOINT_MAGIC)
    (hlen,) = np.frombuffer(data, dtype='<u4', count=1, offset=pos)
    pos += 4
    config = PolicyConfig(**json.loads(data[pos:pos + hlen]))
    pos += int(hlen)
    version, size = np.frombuffer(data, dtype='<u8', count=2, offset=pos)
    pos += 16
    flat = np.frombuffer(data, dtype='<f4', count=int(size), offset=pos)
    policy = ConstraintPolicy(config)
    if int(size) != policy.n_parameters:
        raise ValueError(
            f'{path} holds {size} parameters, the configuration needs '
            f'{policy.n_parameters}')
    with torch.no_grad():
        vector_to_parameters(
            torch.from_numpy(flat.astype(np.float64)), policy.parameters())
    policy.version = int(version)
    return policy
