import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from speechalign import text as tx
from speechalign.errors import DataError, UsageError

ALPHABET = "abcdefghijklmnopqrstuvwxyz <>[]/INSTY\n"


@pytest.fixture(scope="module")
def vocab():
    return tx.Vocabulary.from_alphabet(ALPHABET)


class TestVocabulary:
    def test_dense_ids_and_inverse_map(self, vocab):
        assert sorted(vocab.index.values()) == list(range(len(vocab)))
        for sym, i in vocab.index.items():
            assert vocab.symbols[i] == sym

    def test_specials_present(self, vocab):
        for s in tx.SPECIALS:
            assert s in vocab.index

    def test_file_roundtrip(self, vocab, tmp_path):
        path = tmp_path / "vocab.txt"
        vocab.save(path)
        loaded = tx.Vocabulary.load(path)
        assert loaded.symbols == vocab.symbols
        # one symbol per line, specials spelled out
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[vocab.bos_id] == "<bos>"
        assert lines[vocab.eos_id] == "<eos>"
        assert lines[vocab.pad_id] == "<pad>"
        assert lines[vocab.unk_id] == "<unk>"


class TestEncodeDecode:
    def test_constructed_vocab(self):
        vocab = tx.Vocabulary.from_alphabet("ab")
        a, b = vocab.index["a"], vocab.index["b"]
        assert tx.encode("ab", vocab).ids == (a, b)

    def test_empty(self, vocab):
        assert tx.encode("", vocab).ids == ()
        assert tx.decode(tx.TokenSequence((), vocab)) == ""

    def test_unknown_maps_to_unk_and_is_counted(self, vocab):
        seq = tx.encode("aZb", vocab)
        assert seq.ids[1] == vocab.unk_id
        assert tx.count_unknown("aZb", vocab) == 1

    def test_specials_render_empty(self, vocab):
        ids = (vocab.bos_id, vocab.index["a"], vocab.index["b"], vocab.eos_id)
        assert tx.decode(tx.TokenSequence(ids, vocab)) == "ab"

    def test_out_of_range_id_rejected(self, vocab):
        with pytest.raises(DataError):
            tx.TokenSequence((len(vocab),), vocab)

    @given(st.text(alphabet=ALPHABET, max_size=40))
    @settings(max_examples=200, deadline=None)
    def test_roundtrip_property(self, s):
        vocab = tx.Vocabulary.from_alphabet(ALPHABET)
        assert tx.decode(tx.encode(s, vocab)) == s


class TestTemplate:
    def test_paper_prefix_suffix_bytes(self):
        got = tx.build_prompt("hi")
        assert got == "<s>[INST] <<SYS>>\n\n<</SYS>>\n\nhi [/INST]"

    def test_empty_user_text(self):
        t = tx.ChatTemplate()
        assert tx.build_prompt("", t) == t.prefix + t.suffix

    @given(st.text(alphabet=ALPHABET, max_size=60))
    @settings(max_examples=100, deadline=None)
    def test_length_law(self, s):
        t = tx.ChatTemplate()
        assert len(tx.build_prompt(s, t)) == len(t.prefix) + len(s) + len(t.suffix)

    def test_nonempty_system_prompt(self):
        t = tx.ChatTemplate(system_prompt="be brief")
        assert t.prefix == "<s>[INST] <<SYS>>\nbe brief\n<</SYS>>\n\n"

    def test_encode_template_maps_literals(self, vocab):
        seq = tx.encode_template("<s>[I</s>", vocab)
        assert seq.ids[0] == vocab.bos_id
        assert seq.ids[-1] == vocab.eos_id
        assert tx.decode(seq) == "[I"


class TestConversation:
    def test_single_text_turn_equals_build_prompt(self):
        segs = tx.build_conversation([tx.text_turn(tx.USER, "hello")])
        assert len(segs) == 1
        assert segs[0].kind == "TEXT"
        assert segs[0].text == tx.build_prompt("hello")

    def test_single_audio_turn_sandwich(self):
        ref = object()
        segs = tx.build_conversation([tx.audio_turn(ref)])
        kinds = [s.kind for s in segs]
        assert kinds == ["TEXT", "AUDIO", "TEXT"]
        t = tx.ChatTemplate()
        assert segs[0].text == t.prefix
        assert segs[1].audio is ref
        assert segs[2].text == t.suffix

    def test_non_alternating_rejected(self):
        with pytest.raises(UsageError):
            tx.build_conversation([tx.text_turn(tx.ASSISTANT, "hi")])
        with pytest.raises(UsageError):
            tx.build_conversation(
                [tx.text_turn(tx.USER, "a"), tx.text_turn(tx.USER, "b")]
            )

    def test_mixed_history_substitution_matches_all_text(self):
        import random

        rng = random.Random(42)
        words = ["what", "color", "is", "the", "sky", "blue", "ok", "thanks"]
        for _ in range(100):
            n = rng.randrange(1, 6)
            texts = [" ".join(rng.choices(words, k=rng.randrange(1, 4))) for _ in range(n)]
            mixed, all_text = [], []
            for i, t in enumerate(texts):
                if i % 2 == 0 and rng.random() < 0.5:
                    mixed.append(tx.audio_turn(f"feat-{i}"))
                else:
                    speaker = tx.USER if i % 2 == 0 else tx.ASSISTANT
                    mixed.append(tx.text_turn(speaker, t))
                all_text.append(tx.text_turn(tx.USER if i % 2 == 0 else tx.ASSISTANT, t))
            segs = tx.build_conversation(mixed)
            transcripts = {
                j: texts[int(s.audio.split("-")[1])]
                for j, s in enumerate(segs)
                if s.kind == "AUDIO"
            }
            want = tx.render_segments(tx.build_conversation(all_text))
            assert tx.render_segments(segs, transcripts) == want

    def test_all_text_assembly_is_substitution_fixed_point(self):
        turns = [
            tx.text_turn(tx.USER, "hi"),
            tx.text_turn(tx.ASSISTANT, "hello"),
            tx.text_turn(tx.USER, "bye"),
        ]
        segs = tx.build_conversation(turns)
        assert all(s.kind == "TEXT" for s in segs)
        assert len(segs) == 1  # merged into one byte string
        t = tx.ChatTemplate()
        assert segs[0].text == t.prefix + "hi" + t.suffix + " hello</s>" + "<s>[INST] bye [/INST]"
