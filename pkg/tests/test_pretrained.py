"""The pretrained-encoder path, exercised with a tiny randomly initialized BERT saved locally."""

import numpy as np
import pytest

transformers = pytest.importorskip("transformers")

from golden_fixtures import MACG  # noqa: E402
from helpers import train_items  # noqa: E402
from stepwise_qa.config import TrainingConfig  # noqa: E402
from stepwise_qa.encoder import build_sequence  # noqa: E402
from stepwise_qa.reader import BackendError, forward, load_checkpoint, new_reader, save_checkpoint  # noqa: E402

WORDS = (
    "marine air control group 28 is based at cherry point it was formed in 1967 where who what when "
    "born city town film comedy founded the a of and"
).split()


@pytest.fixture(scope="module")
def local_bert(tmp_path_factory):
    d = tmp_path_factory.mktemp("bert")
    vocab = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", ".", "?", ",", "-", ":", "'", "(", ")"]
    vocab += WORDS + [chr(c) for c in range(ord("a"), ord("z") + 1)] + [str(i) for i in range(10)]
    vocab += ["##" + chr(c) for c in range(ord("a"), ord("z") + 1)] + ["##" + str(i) for i in range(10)]
    (d / "vocab.txt").write_text("\n".join(dict.fromkeys(vocab)) + "\n")
    tok = transformers.BertTokenizerFast(vocab_file=str(d / "vocab.txt"), do_lower_case=True)
    cfg = transformers.BertConfig(vocab_size=tok.vocab_size, hidden_size=32, num_hidden_layers=1,
                                  num_attention_heads=2, intermediate_size=64, max_position_embeddings=512)
    transformers.set_seed(0)
    transformers.BertModel(cfg).save_pretrained(d)
    tok.save_pretrained(d)
    return str(d)


def test_forward_contract(local_bert):
    params = new_reader("pretrained", name_or_path=local_bert, max_hops=2)
    seq = build_sequence(2, "Where is MACG-28 based?", [], MACG, True, params.tokenizer)
    assert seq.tokens[0] == "[CLS]" and "HOP=2" in seq.tokens
    out = forward([seq], params)[0]
    assert out.sentence_probs.shape == (2,)
    assert abs(out.span_start.sum() - 1) < 1e-5
    # wordpiece offsets still map back to the original paragraph text
    pos = sorted(seq.offset_map)
    assert seq.span_text(pos[0], pos[-1]).startswith("Marine")


def test_checkpoint_round_trip(local_bert, tmp_path):
    params = new_reader("pretrained", name_or_path=local_bert, max_hops=2)
    seq = build_sequence(1, "Where is it?", [], MACG, False, params.tokenizer)
    before = forward([seq], params)[0]
    save_checkpoint(params, tmp_path / "ck")
    after = forward([seq], load_checkpoint(tmp_path / "ck"))[0]
    assert np.array_equal(before.sentence_probs, after.sentence_probs)
    assert before.end_prob == after.end_prob


def test_hop_marker_beyond_k_rejected(local_bert):
    params = new_reader("pretrained", name_or_path=local_bert, max_hops=2)
    seq = build_sequence(3, "q?", [], MACG, False, params.tokenizer)
    with pytest.raises(BackendError):
        forward([seq], params)


def test_short_training_run(local_bert):
    from stepwise_qa.objective import train

    items = train_items(4)
    cfg = TrainingConfig(batch_size=2, epochs=1, learning_rate=1e-3)
    res = train(items, cfg, "pretrained", backend_options={"name_or_path": local_bert})
    assert res.steps == 2 and all(np.isfinite(r["total"]) for r in res.log)
