"""
Speech-to-text cascade with an endpointing recognizer
=====================================================

Replays a timed word stream through a simulated incremental recognizer
that decides, block by block of audio, when to finalize and hand its
transcript to an online translation model.  The controller alternates
READ (consume audio) and WRITE (emit target tokens under a length
budget), and every action lands in a millisecond-stamped trace.
"""

# 1. a quick copy-task model: the "translation" echoes its transcript,
#    which makes the cascade's timing easy to follow
from simumt import model as M
from simumt import training as T
from simumt.corpus import gen_toy_corpus, split_corpus, toy_vocabulary

pairs = gen_toy_corpus(seed=3, n_pairs=2000, task="copy")
vocab = toy_vocabulary("copy")
train_pairs, dev = split_corpus(pairs, 200)
params = M.init_parameters(M.desk_config(len(vocab)), seed=0)
result = T.train(params, train_pairs, dev, T.LossConfig(mode="multi_path"),
                 epochs=4, seed=0, batch_size=32, base_lr=0.2,
                 warmup_steps=400)
print(f"copy model trained to dev loss {result.history[-1].dev_loss:.3f}")

# 2. the audio: two spoken phrases separated by 2.4 s of silence --
#    long enough for the silence-after-speech endpoint rule to fire
from simumt.cascade import TimedWord

stream = [
    TimedWord("g", 0.0, 300.0),
    TimedWord("f", 400.0, 300.0),
    TimedWord("c", 800.0, 300.0),
    # -- 2.4 s pause: the recognizer should endpoint here --
    TimedWord("d", 3500.0, 300.0),
    TimedWord("a", 3900.0, 300.0),
]
print("stream:", " ".join(f"{w.word}@{w.start_ms:.0f}ms" for w in stream))

# 3. the cascade: rule c endpoints after 2 s of post-speech silence;
#    the write budget allows one token per transcribed token plus two
from simumt.cascade import CascadeConfig, CascadeMT, EndpointRule, cascade_decode

mt = CascadeMT(
    models=[result.params],
    encode_source=lambda text: [vocab.id(w) for w in text.split()],
)
config = CascadeConfig(sz=1, alpha=1.0, beta=2.0,
                       endpoint_rules=(EndpointRule("c", 2.0),))
res = cascade_decode(stream, mt, config, total_ms=6200.0)

# 4. the trace, as a timeline: READs consume 100 ms blocks, WRITEs are
#    stamped with the milliseconds of audio consumed so far
from simumt.online import ReadEvent

n_blocks = 0
for e in res.trace.events:
    if isinstance(e, ReadEvent):
        n_blocks += 1
        continue
    print(f"  after {e.g_ms:7.0f} ms ({e.g_tokens} blocks read) "
          f"-> wrote {vocab.token(e.token)!r}")
print(f"({n_blocks} READ events of 100 ms each, shown collapsed)")
print("translation:", " ".join(vocab.token(t) for t in res.tokens))
print(f"transcribed {res.transcript_tokens} source tokens, "
      f"truncated={res.truncated}")

# The first burst of writes comes when the 2 s silence rule fires at
# 3100 ms: the budget (1.0 * 3 transcribed + 2) lets the decoder commit
# five tokens, so beyond the three it has actually heard it must guess
# two -- wait-k over-commitment in action.  The second fire coincides
# with audio depletion at 6200 ms; with the full transcript and the
# source-final marker in view, the decoder finishes and writes EOS.
