import math

import numpy as np
import pytest

from conftest import activation_pattern, close, tiny_model_config
import dptrn.model as model_module
from dptrn.errors import ConfigurationError, DimensionError, StateError
from dptrn.layers import softmax_cross_entropy
from dptrn.model import (
    DptrnModel,
    RelationBatch,
    RelationReport,
    absolute_position_embedding,
    build_relation_input,
    combine_and_pool,
    decoupling_position_embedding,
)

STEP = 1e-5


# ---- position embeddings ----

def test_position_zero_alternates():
    np.testing.assert_array_equal(absolute_position_embedding(0, 5), [0.0, 1.0, 0.0, 1.0, 0.0])


def test_position_one_two_dims():
    np.testing.assert_allclose(absolute_position_embedding(1, 2), [math.sin(1.0), math.cos(1.0)], rtol=1e-15)


def test_position_large_index_uses_library_trig():
    assert absolute_position_embedding(10000, 2)[0] == pytest.approx(math.sin(10000.0), abs=1e-12)


def test_position_frequencies_pair_up():
    pe = absolute_position_embedding(3, 4)
    expected = [math.sin(3.0), math.cos(3.0), math.sin(3.0 / 100.0), math.cos(3.0 / 100.0)]
    np.testing.assert_allclose(pe, expected, rtol=1e-14)


# ---- relation input and pooling ----

def test_relation_input_scalar_case():
    np.testing.assert_array_equal(build_relation_input(np.array([2.0]), np.array([3.0])), [2.0, 3.0, -1.0, 5.0])


def test_relation_input_symmetric_pair(rng):
    v = rng.standard_normal(3)
    np.testing.assert_array_equal(build_relation_input(v, v), np.concatenate([v, v, np.zeros(3), 2 * v]))


def test_relation_input_elementwise(rng):
    a, b = rng.standard_normal(3), rng.standard_normal(3)
    out = build_relation_input(a, b)
    for i in range(3):
        assert out[i] == a[i] and out[3 + i] == b[i]
        assert out[6 + i] == a[i] - b[i] and out[9 + i] == a[i] + b[i]


def test_relation_input_length_mismatch():
    with pytest.raises(DimensionError):
        build_relation_input(np.zeros(3), np.zeros(2))


def test_dpe_identity_matrices_is_position_inner_product():
    eye = np.eye(4)
    expected = absolute_position_embedding(1, 4) @ absolute_position_embedding(5, 4)
    assert decoupling_position_embedding(eye, eye, 1, 5) == pytest.approx(expected, rel=1e-14)


def test_dpe_zero_query_annihilates(rng):
    p_key = rng.standard_normal((4, 4))
    assert all(decoupling_position_embedding(np.zeros((4, 4)), p_key, k, 5) == 0.0 for k in range(5))


def test_dpe_matches_double_loop(rng):
    m = 4
    p_query, p_key = rng.standard_normal((m, m)), rng.standard_normal((m, m))
    pe_k, pe_t = absolute_position_embedding(1, m), absolute_position_embedding(5, m)
    query = [sum(pe_k[i] * p_query[i, j] for i in range(m)) for j in range(m)]
    key = [sum(pe_t[i] * p_key[i, j] for i in range(m)) for j in range(m)]
    expected = sum(query[j] * key[j] for j in range(m))
    assert decoupling_position_embedding(p_query, p_key, 1, 5) == pytest.approx(expected, rel=1e-12)


def test_pool_one_hot_selects_row(rng):
    history = rng.standard_normal((5, 3))
    rw_pre = np.zeros(5)
    rw_pre[2] = math.sqrt(3)
    report = combine_and_pool(rw_pre, np.zeros(5), history)
    np.testing.assert_allclose(report.hi, history[2], rtol=1e-15)


def test_pool_uniform_weights_sum_columns(rng):
    history = rng.standard_normal((5, 3))
    report = combine_and_pool(np.full(5, math.sqrt(3)), np.zeros(5), history)
    np.testing.assert_allclose(report.hi, history.sum(axis=0), rtol=1e-14)


def test_pool_matches_outer_product(rng):
    history = rng.standard_normal((3, 3))
    rw_pre, dpe = rng.standard_normal(3), rng.standard_normal(3)
    report = combine_and_pool(rw_pre, dpe, history)
    rw = (rw_pre + dpe) / math.sqrt(3)
    np.testing.assert_allclose(report.rw, rw, rtol=1e-15)
    np.testing.assert_allclose(report.hi, (rw[:, None] * history).sum(axis=0), rtol=1e-13)


def test_pool_batch_matches_per_sample(rng):
    history = rng.standard_normal((4, 5, 3))
    rw_pre, dpe = rng.standard_normal((4, 5)), rng.standard_normal(5)
    batch = combine_and_pool(rw_pre, dpe, history)
    assert isinstance(batch, RelationBatch) and len(batch) == 4
    for b, report in enumerate(batch):
        single = combine_and_pool(rw_pre[b], dpe, history[b])
        assert isinstance(single, RelationReport)
        np.testing.assert_allclose(report.rw, single.rw, rtol=1e-15)
        np.testing.assert_allclose(report.hi, single.hi, rtol=1e-13)


def test_pool_rejects_mismatched_rw_pre(rng):
    with pytest.raises(DimensionError):
        combine_and_pool(np.zeros((2, 4)), np.zeros(5), rng.standard_normal((2, 5, 3)))


def test_dpe_index_array_matches_single_indices(rng):
    p_query, p_key = rng.standard_normal((4, 4)), rng.standard_normal((4, 4))
    terms = decoupling_position_embedding(p_query, p_key, np.arange(5), 5)
    assert terms.shape == (5,)
    for k in range(5):
        assert terms[k] == pytest.approx(decoupling_position_embedding(p_query, p_key, k, 5), rel=1e-12)


def test_dpe_rejects_current_or_later_index():
    with pytest.raises(ConfigurationError):
        decoupling_position_embedding(np.eye(3), np.eye(3), 5, 5)


def test_forward_pools_through_combine_and_pool(monkeypatch, tiny_batch):
    calls = []

    def recording(rw_pre, dpe, history):
        calls.append(history.shape)
        return combine_and_pool(rw_pre, dpe, history)

    monkeypatch.setattr(model_module, "combine_and_pool", recording)
    model = DptrnModel(tiny_model_config(), seed=0).eval()
    _, relations = model.forward(tiny_batch[0])
    assert calls == [(5, 3, 3)]
    expected_dpe = decoupling_position_embedding(model.p_query, model.p_key, np.arange(3), 3)
    np.testing.assert_array_equal(relations.dpe, expected_dpe)


# ---- relation unit ----

def _zero_relation(model):
    for linear in model.relation.linears():
        linear.weight[:] = 0.0
        linear.bias[:] = 0.0


def test_zero_relation_network_gives_zero_weights(tiny_batch):
    model = DptrnModel(tiny_model_config(), seed=1).eval()
    _zero_relation(model)
    assert not model.relation_weights_pre(tiny_batch[0]).any()


def test_depth_one_relation_unit_is_affine(rng):
    model = DptrnModel(tiny_model_config(relation_hidden=()), seed=2).eval()
    nodes = rng.standard_normal((2, 4, 3))
    out = model.relation_weights_pre(nodes)
    layer = model.relation.output
    for b in range(2):
        for k in range(3):
            pair = build_relation_input(nodes[b, -1], nodes[b, k])
            assert out[b, k] == pytest.approx(float(pair @ layer.weight[0] + layer.bias[0]), abs=1e-12)


def test_parallel_equals_sequential():
    rng = np.random.default_rng(11)
    model = DptrnModel(tiny_model_config(T=8, M=4, C=3, relation_hidden=(16, 8)), seed=5)
    model.train()
    model.forward(rng.standard_normal((32, 8, 4)))
    model.eval()
    nodes = rng.standard_normal((50, 8, 4))
    batched = model.relation_weights_pre(nodes)
    sequential = model.relation_weights_pre_sequential(nodes)
    assert np.abs(batched - sequential).max() < 1e-10


def test_sequential_requires_eval_mode(tiny_batch):
    with pytest.raises(StateError):
        DptrnModel(tiny_model_config()).relation_weights_pre_sequential(tiny_batch[0])


def test_relation_unit_is_shared_across_nodes(tiny_batch):
    model = DptrnModel(tiny_model_config(), seed=3).eval()
    before = model.relation_weights_pre(tiny_batch[0])
    model.relation.output.bias[0] += 1.0
    after = model.relation_weights_pre(tiny_batch[0])
    np.testing.assert_allclose(after - before, 1.0, atol=1e-12)


def test_parameter_count_does_not_depend_on_t():
    counts = {DptrnModel(tiny_model_config(T=t)).num_learnable() for t in (2, 4, 9, 30)}
    assert len(counts) == 1


def test_relation_weights_are_not_normalised(tiny_batch):
    model = DptrnModel(tiny_model_config(), seed=4).eval()
    _zero_relation(model)
    model.relation.output.bias[0] = 1.0
    assert model.relation_weights_pre(tiny_batch[0]).sum(axis=1).min() > 1.0
    model.relation.output.bias[0] = -1.0
    assert model.relation_weights_pre(tiny_batch[0]).sum(axis=1).max() < 0.0
    logits, _ = model.forward(tiny_batch[0])
    assert np.all(np.isfinite(logits))


# ---- forward ----

def test_zero_output_layer_gives_uniform_probabilities(rng):
    model = DptrnModel(tiny_model_config(C=2), seed=0)
    model.classifier.output.weight[:] = 0.0
    np.testing.assert_allclose(model.predict_proba(rng.standard_normal((3, 4, 3))), 0.5, rtol=1e-15)


def test_eval_forward_is_bit_identical(tiny_batch):
    model = DptrnModel(tiny_model_config(dropout_rate=0.1), seed=0).eval()
    first, rel_first = model.forward(tiny_batch[0])
    second, rel_second = model.forward(tiny_batch[0])
    assert np.array_equal(first, second)
    assert np.array_equal(rel_first.rw, rel_second.rw)


def test_dpe_identical_across_samples(tiny_batch):
    model = DptrnModel(tiny_model_config(), seed=0).eval()
    _, relations = model.forward(tiny_batch[0])
    reports = list(relations)
    assert max(np.abs(r.dpe - reports[0].dpe).max() for r in reports) == 0.0


def test_rw_combines_rw_pre_and_dpe(tiny_batch):
    model = DptrnModel(tiny_model_config(), seed=0).eval()
    _, relations = model.forward(tiny_batch[0])
    np.testing.assert_allclose(relations.rw, (relations.rw_pre + relations.dpe) / math.sqrt(3), atol=1e-15)
    np.testing.assert_allclose(relations.hi, np.einsum("bk,bkm->bm", relations.rw, tiny_batch[0][:, :-1]), atol=1e-14)


def _straight_line_logits(model, nodes):
    """Independent recomputation of the eval-mode forward pass."""
    cfg = model.config
    m = cfg.M

    def mlp(stack, x):
        h = x
        for block in stack.hidden:
            z = block.linear.weight @ h + block.linear.bias
            n = block.norm
            z = n.gamma * (z - n.running_mean) / np.sqrt(n.running_var + n.eps) + n.beta
            h = np.maximum(z, 0.0)
        return stack.output.weight @ h + stack.output.bias

    def pe(pos):
        out = []
        for i in range(m):
            angle = pos / 10000.0 ** (2 * (i // 2) / m)
            out.append(math.sin(angle) if i % 2 == 0 else math.cos(angle))
        return np.array(out)

    t = cfg.T
    logits = []
    for sample in nodes:
        current = sample[t - 1]
        key = pe(t - 1) @ model.p_key
        hi = np.zeros(m)
        for k in range(t - 1):
            d_k = sample[k]
            pair = np.concatenate([current, d_k, current - d_k, current + d_k])
            rw_pre = mlp(model.relation, pair)[0]
            dpe = float((pe(k) @ model.p_query) @ key)
            hi += (rw_pre + dpe) / math.sqrt(m) * d_k
        logits.append(mlp(model.classifier, np.concatenate([hi, current])))
    return np.array(logits)


def test_forward_matches_straight_line_recomputation():
    rng = np.random.default_rng(21)
    cfg = tiny_model_config(T=3, M=2, C=2, relation_hidden=(4, 3), classifier_hidden=(4, 3, 2))
    model = DptrnModel(cfg, seed=8)
    model.p_query[:] = rng.standard_normal((2, 2))
    model.p_key[:] = rng.standard_normal((2, 2))
    for stack in (model.relation, model.classifier):
        for norm in stack.norms():
            norm.load_buffers(rng.standard_normal(norm.dim), rng.random(norm.dim) + 0.5)
            norm.gamma[:] = rng.standard_normal(norm.dim)
            norm.beta[:] = rng.standard_normal(norm.dim)
    model.eval()
    nodes = rng.standard_normal((4, 3, 2))
    np.testing.assert_allclose(model.forward(nodes)[0], _straight_line_logits(model, nodes), rtol=0, atol=1e-10)


def test_classifier_input_slices(rng):
    model = DptrnModel(tiny_model_config(), seed=6).eval()
    nodes = rng.standard_normal((3, 4, 3))
    changed = nodes.copy()
    changed[:, :-1, :] += rng.standard_normal((3, 3, 3))
    assert not np.allclose(model.forward(nodes)[0], model.forward(changed)[0])
    # history reaches the logits only through the first M classifier inputs
    model.classifier.hidden[0].linear.weight[:, :3] = 0.0
    np.testing.assert_array_equal(model.forward(nodes)[0], model.forward(changed)[0])


def test_ablation_a_permutation_leaves_history_vector(rng):
    model = DptrnModel(tiny_model_config(variant="ablation_a", T=6), seed=7).eval()
    nodes = rng.standard_normal((2, 6, 3))
    perm = np.array([3, 0, 4, 1, 2])
    permuted = nodes.copy()
    permuted[:, :-1] = nodes[:, perm]
    _, base = model.forward(nodes)
    _, moved = model.forward(permuted)
    np.testing.assert_allclose(moved.rw_pre, base.rw_pre[:, perm], atol=1e-13)
    np.testing.assert_allclose(moved.hi, base.hi, atol=1e-12)


def test_full_variant_permutation_changes_history_vector(rng):
    model = DptrnModel(tiny_model_config(T=6), seed=7).eval()
    model.p_query[:] = rng.standard_normal((3, 3))
    model.p_key[:] = rng.standard_normal((3, 3))
    nodes = rng.standard_normal((2, 6, 3))
    permuted = nodes.copy()
    permuted[:, :-1] = nodes[:, [3, 0, 4, 1, 2]]
    assert np.abs(model.forward(permuted)[1].hi - model.forward(nodes)[1].hi).max() > 1e-6


def test_ablation_b_adds_positions_to_features(rng):
    cfg_a = tiny_model_config(variant="ablation_a")
    cfg_b = tiny_model_config(variant="ablation_b")
    model_a, model_b = DptrnModel(cfg_a, seed=1).eval(), DptrnModel(cfg_b, seed=1).eval()
    nodes = rng.standard_normal((2, 4, 3))
    shifted = nodes + model_b.positions[None]
    np.testing.assert_allclose(model_b.forward(nodes)[0], model_a.forward(shifted)[0], atol=1e-12)
    assert model_b.p_query is None


def test_flatten_baseline_has_no_relation_unit(rng):
    model = DptrnModel(tiny_model_config(variant="flatten_mlp"), seed=0)
    assert model.relation is None and model.p_query is None
    assert model.classifier.widths[0] == 12
    logits, relations = model.eval().forward(rng.standard_normal((2, 4, 3)))
    assert logits.shape == (2, 3) and relations is None
    with pytest.raises(ConfigurationError):
        model.relation_weights_pre(rng.standard_normal((2, 4, 3)))


def test_wrong_node_shape(rng):
    with pytest.raises(DimensionError):
        DptrnModel(tiny_model_config()).forward(rng.standard_normal((2, 5, 3)))


def test_predict_ties_go_to_lowest_class(rng):
    model = DptrnModel(tiny_model_config(), seed=0)
    model.classifier.output.weight[:] = 0.0
    np.testing.assert_array_equal(model.predict(rng.standard_normal((4, 4, 3))), 0)


# ---- backward ----

def test_backward_requires_train_mode(tiny_batch):
    model = DptrnModel(tiny_model_config()).eval()
    with pytest.raises(StateError):
        model.loss_and_backward(*tiny_batch)
    model.forward(tiny_batch[0])
    with pytest.raises(StateError):
        model.backward(np.zeros((5, 3)))


def test_saturated_logits_give_zero_gradients(tiny_batch):
    model = DptrnModel(tiny_model_config(), seed=0).train()
    model.classifier.output.weight[:] = 0.0
    model.classifier.output.bias[:] = [1000.0, 0.0, 0.0]
    model.zero_grad()
    model.loss_and_backward(tiny_batch[0], np.zeros(5, dtype=int))
    assert max(np.abs(p.grad).max() for p in model.parameters()) < 1e-12


@pytest.mark.parametrize("variant", ["full", "ablation_a", "ablation_b", "flatten_mlp"])
def test_gradients_match_finite_differences(variant):
    rng = np.random.default_rng(99)
    model = DptrnModel(tiny_model_config(variant=variant), seed=13).train()
    if model.p_query is not None:
        model.p_query[:] = rng.standard_normal((3, 3)) * 0.5
        model.p_key[:] = rng.standard_normal((3, 3)) * 0.5
    nodes = rng.standard_normal((5, 4, 3))
    labels = np.array([0, 1, 2, 1, 0])

    model.zero_grad()
    model.loss_and_backward(nodes, labels)
    pattern = activation_pattern(model)

    for param in model.parameters():
        flat = param.value.reshape(-1)
        picks = rng.choice(flat.size, size=min(20, flat.size), replace=False)
        checked = 0
        for i in picks:
            saved = flat[i]
            flat[i] = saved + STEP
            plus = model.loss(nodes, labels)
            same = np.array_equal(activation_pattern(model), pattern)
            flat[i] = saved - STEP
            minus = model.loss(nodes, labels)
            same = same and np.array_equal(activation_pattern(model), pattern)
            flat[i] = saved
            if not same:
                continue
            numeric = (plus - minus) / (2 * STEP)
            assert close(param.grad.reshape(-1)[i], numeric), (param.name, i)
            checked += 1
        assert checked >= 0.8 * len(picks), param.name


def test_input_gradient_matches_finite_differences(tiny_batch):
    nodes, labels = tiny_batch
    nodes = nodes.copy()
    model = DptrnModel(tiny_model_config(), seed=2).train()
    model.zero_grad()
    logits, _ = model.forward(nodes)
    _, grad_logits = softmax_cross_entropy(logits, labels)
    grad_nodes = model.backward(grad_logits)
    pattern = activation_pattern(model)
    for index in [(0, 0, 0), (1, 3, 2), (4, 2, 1), (2, 3, 0)]:
        saved = nodes[index]
        nodes[index] = saved + STEP
        plus = model.loss(nodes, labels)
        nodes[index] = saved - STEP
        minus = model.loss(nodes, labels)
        nodes[index] = saved
        if np.array_equal(activation_pattern(model), pattern):
            assert close(grad_nodes[index], (plus - minus) / (2 * STEP))


def test_relation_gradient_accumulates_over_nodes():
    rng = np.random.default_rng(5)
    grads = {}
    for t in (4, 7):
        model = DptrnModel(tiny_model_config(T=t, relation_hidden=(16, 8)), seed=9).train()
        model.zero_grad()
        model.forward(rng.standard_normal((32, t, 3)))
        model.backward_relation(np.ones((32, t - 1)))
        grads[t] = (model.relation.output.grad_bias.copy(), np.linalg.norm(model.relation.output.grad_weight))
    assert grads[7][0][0] == pytest.approx(2 * grads[4][0][0], rel=1e-12)
    assert 1.6 <= grads[7][1] / grads[4][1] <= 2.4


def test_state_dict_round_trip(tiny_batch):
    source = DptrnModel(tiny_model_config(), seed=1)
    source.forward(tiny_batch[0])
    target = DptrnModel(tiny_model_config(), seed=2)
    target.load_state_dict(source.state_dict())
    np.testing.assert_array_equal(source.eval().forward(tiny_batch[0])[0], target.eval().forward(tiny_batch[0])[0])


def test_state_dict_rejects_other_variant():
    source = DptrnModel(tiny_model_config(variant="ablation_a"))
    with pytest.raises(ConfigurationError):
        DptrnModel(tiny_model_config()).load_state_dict(source.state_dict())


def test_num_learnable_counts_every_array(tiny_config):
    model = DptrnModel(tiny_config)
    assert model.num_learnable() == sum(v.size for k, v in model.state_dict().items() if "running" not in k)
