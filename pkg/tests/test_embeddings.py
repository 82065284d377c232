import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tracer.embeddings import (CachedEmbedder, EmbeddingProviderConfig, HashedBowEmbedder, build_embedder,
                               cosine_similarity, fnv1a_64, hashed_bow, semantic_distance, tokenize)
from tracer.errors import ConfigError, DimensionError, EmbeddingProviderError


def test_fnv1a_reference_vectors():
    # Published FNV-1a 64 test vectors (seed 0 leaves the offset basis untouched).
    assert fnv1a_64(b"", 0) == 0xCBF29CE484222325
    assert fnv1a_64(b"a", 0) == 0xAF63DC4C8601EC8C
    assert fnv1a_64(b"foobar", 0) == 0x85944171F73967E8


def test_golden_vectors():
    v = hashed_bow("book flight")
    assert list(np.nonzero(v)[0]) == [73, 202]
    assert np.allclose(v[[73, 202]], 2 ** -0.5, atol=0, rtol=1e-15)
    w = hashed_bow("Book a flight to Paris, book it")
    assert list(np.nonzero(w)[0]) == [45, 63, 73, 83, 202, 249]
    assert w[73] == pytest.approx(2 / 3, abs=1e-15)


def test_tokenize():
    assert tokenize("Book_flight A123, to-Paris!") == ["book", "flight", "a123", "to", "paris"]


def test_empty_text_zero_vector():
    v = hashed_bow("")
    assert v.shape == (256,) and not v.any()


def test_deterministic_and_order_invariant():
    assert np.array_equal(hashed_bow("book flight"), hashed_bow("book flight"))
    assert np.array_equal(hashed_bow("book flight"), hashed_bow("flight book"))


def test_cosine_examples():
    v = np.array([0.3, -1.2, 2.0])
    assert cosine_similarity(v, v) == pytest.approx(1.0, abs=1e-12)
    assert cosine_similarity(v, np.zeros(3)) == 0.0
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    assert semantic_distance([1, 0], [0, 1]) == 1.0


def test_dimension_mismatch():
    with pytest.raises(DimensionError):
        cosine_similarity([1, 0], [1, 0, 0])


_vec = st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=4).map(np.array)


@given(_vec, _vec, st.floats(1e-3, 1e3))
def test_cosine_symmetry_and_scale(u, v, lam):
    assert cosine_similarity(u, v) == cosine_similarity(v, u)
    if np.linalg.norm(u) > 1e-6 and np.linalg.norm(v) > 1e-6:
        assert cosine_similarity(lam * u, v) == pytest.approx(cosine_similarity(u, v), abs=1e-12)
    assert -1.0 <= cosine_similarity(u, v) <= 1.0


@given(st.lists(st.text(max_size=20), max_size=30))
def test_cache_transparent(texts):
    plain = HashedBowEmbedder()
    cached = CachedEmbedder(HashedBowEmbedder(), capacity=3)
    for t in texts + texts:
        assert np.array_equal(plain.embed(t), cached.embed(t))
    assert len(cached._store) <= 3


def test_config_validation():
    with pytest.raises(ConfigError):
        EmbeddingProviderConfig(dimension=4)
    with pytest.raises(ConfigError):
        EmbeddingProviderConfig(cache_capacity=-1)
    with pytest.raises(ConfigError):
        EmbeddingProviderConfig(kind="word2vec")


class _Handler(BaseHTTPRequestHandler):
    dimension = 16

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        vecs = [hashed_bow(t, 16).tolist() for t in body["texts"]]
        if self.path == "/wrong-dim":
            vecs = [v[:8] for v in vecs]
        data = json.dumps({"vectors": vecs}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture(scope="module")
def server():
    srv = HTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{srv.server_port}"
    srv.shutdown()


def test_http_provider(server):
    emb = build_embedder(EmbeddingProviderConfig(kind="external_http", dimension=16, endpoint=server + "/"))
    assert np.allclose(emb.embed("book flight"), hashed_bow("book flight", 16))


def test_http_wrong_dimension(server):
    emb = build_embedder(EmbeddingProviderConfig(kind="external_http", dimension=16, endpoint=server + "/wrong-dim",
                                                 cache_capacity=0))
    with pytest.raises(EmbeddingProviderError, match="dimension"):
        emb.embed("x")


def test_http_unreachable_falls_back():
    cfg = dict(kind="external_http", dimension=16, endpoint="http://127.0.0.1:9/", retries=0, timeout=0.5)
    with pytest.raises(EmbeddingProviderError):
        build_embedder(EmbeddingProviderConfig(**cfg)).embed("x")
    emb = build_embedder(EmbeddingProviderConfig(**cfg, fallback_to_builtin=True))
    assert np.array_equal(emb.embed("book flight"), hashed_bow("book flight", 16))


def test_env_overrides_endpoint(server, monkeypatch):
    monkeypatch.setenv("TRACER_EMBED_URL", server + "/")
    emb = build_embedder(EmbeddingProviderConfig(kind="external_http", dimension=16,
                                                 endpoint="http://127.0.0.1:9/"))
    assert np.allclose(emb.embed("a b"), hashed_bow("a b", 16))
