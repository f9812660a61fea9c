import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reachcert.sdp import SdpStandardForm
from reachcert.sdpa import SdpaFormatError, count_entries, export_sdpa, parse_sdpa, read_sdpa, sdpa_lines
from reachcert.sos import encode, SosProgram


def canonical(form: SdpStandardForm):
    def merged(ents):
        out = {}
        for e in ents:
            out[e[:-1]] = out.get(e[:-1], 0.0) + e[-1]
        return {k: v for k, v in out.items() if v != 0.0}

    return (list(form.block_dims), form.rhs.tolist(), [merged(e) for e in form.block_entries],
            merged(form.free_entries), form.n_free, [merged(c) for c in form.block_cost], form.free_cost.tolist())


def test_minimal_file(tmp_path):
    form = SdpStandardForm([1], [1.0], [[(0, 0, 0, 1.0)]])
    p = tmp_path / "min.dat-s"
    assert export_sdpa(form, p) == 1
    body = [ln for ln in p.read_text().splitlines() if ln and ln[0] not in "\"*"]
    assert body[:4] == ["1", "1", "1", "1"] or [b.split()[0] for b in body[:3]] == ["1", "1", "1"]
    assert len(body) == 5  # 4 header lines plus the single entry
    assert canonical(read_sdpa(p)) == canonical(form)


def test_example2_roundtrip(tmp_path, scenarios):
    sc = scenarios["example2"]
    pr = sc.problem()
    form = encode(SosProgram(6, sc.lam, sc.eps, pr.safe, pr.target, pr.chat, pr.x0, pr.dynamics, pr.dist))
    p = tmp_path / "ex2.dat-s"
    n = export_sdpa(form, p)
    assert n == form.nnz()
    back = read_sdpa(p)
    assert canonical(back) == canonical(form)
    # a second trip is byte-identical
    q = tmp_path / "again.dat-s"
    export_sdpa(back, q)
    assert p.read_text() == q.read_text()


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 5), st.integers(0, 3), st.integers(0, 10**6))
def test_random_roundtrip(n, m, n_free, seed):
    rng = np.random.default_rng(seed)
    pos = {(r, *sorted(int(t) for t in rng.integers(0, n, 2))) for r in range(m) for _ in range(3)}
    ents = [(r, i, j, float(rng.normal())) for r, i, j in sorted(pos)]
    free = [(int(rng.integers(0, m)), int(c), float(rng.normal())) for c in range(n_free)]
    form = SdpStandardForm([n, 1], rng.normal(size=m), [ents, [(0, 0, 0, 2.5)]], free_entries=free, n_free=n_free,
                           block_cost=[[(0, 0, float(rng.normal()))], []], free_cost=rng.normal(size=n_free))
    text = "\n".join(sdpa_lines(form)) + "\n"
    assert canonical(parse_sdpa(text)) == canonical(form)
    assert count_entries(sdpa_lines(form)) == form.nnz()


@pytest.mark.parametrize("text", ["1\n1\n", "1\n1\n2\n1.0\n0 1 1 1\n", "1\n1\n1\n1.0\n0 1 1 1 x\n",
                                  "1\n1\n1\n1.0\n2 1 1 1 1.0\n"])
def test_malformed(text):
    with pytest.raises(SdpaFormatError):
        parse_sdpa(text)
