"""Independent model of a stub-mode run plus evaluation.

Regenerates tests/golden/stub_eval.json from the fixture corpus and the prompt
assets. ROUGE comes from the `rouge-score` package; everything else is
reimplemented here from the stub definition.

    python3 crates/cli/tests/oracles/stub_pipeline.py > crates/cli/tests/golden/stub_eval.json
"""

import json
import math
import pathlib
import re
import struct
try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from rouge_score import rouge_scorer

ROOT = pathlib.Path(__file__).resolve().parents[4]
ASSETS = ROOT / "crates/core/assets/prompts"
CORPUS = ROOT / "crates/cli/tests/fixtures/stub_corpus.jsonl"
SEED = 0
ATTEMPTS = 3
DIM = 16
M = (1 << 64) - 1

OPENERS = [
    "Great point!",
    "Good effort.",
    "Nice work.",
    "I see what you mean.",
    "Well done!",
    "That's interesting.",
    "Let's think about that.",
    "Thanks for sharing.",
]


def tokenize(text):
    out, cur = [], []
    for ch in text:
        if ch.isalnum():
            cur.append(ch)
        elif cur:
            out.append("".join(cur).lower())
            cur = []
    if cur:
        out.append("".join(cur).lower())
    return out


def fnv(h, bs):
    for b in bs:
        h ^= b
        h = (h * 0x100000001B3) & M
    return h


def shash(bs, seed):
    return fnv(fnv(0xCBF29CE484222325, bs), struct.pack("<Q", seed))


def unit(v):
    n = math.sqrt(sum(x * x for x in v))
    return [x / n for x in v]


def vec(key, seed):
    st = shash(key.encode(), seed)
    out = []
    for _ in range(DIM):
        st = (st + 0x9E3779B97F4A7C15) & M
        z = st
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M
        z ^= z >> 31
        out.append((z >> 11) * (1.0 / (1 << 53)) * 2.0 - 1.0)
    return unit(out)


def stub_tokens(text):
    return tokenize(text) or [text]


def sentence_vec(text):
    ts = stub_tokens(text)
    keys = ts + [f"{a} {b}" for a, b in zip(ts, ts[1:])]
    s = [0.0] * DIM
    for k in keys:
        for i, x in enumerate(vec(k, SEED)):
            s[i] += x
    return unit(s)


def pooled_vec(text):
    rows = [vec(t, SEED) for t in stub_tokens(text)]
    return [sum(r[i] for r in rows) / len(rows) for i in range(DIM)]


def cos(a, b):
    d = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(x * x for x in b))
    return max(-1.0, min(1.0, d / (na * nb)))


def load_templates():
    man = tomllib.loads((ASSETS / "manifest.toml").read_text())

    def body(name):
        t = (ASSETS / name).read_text().replace("\r\n", "\n")
        return t[:-1] if t.endswith("\n") else t

    own = {t["id"]: body(t["file"]) for t in man["template"]}
    out = {}
    for t in man["template"]:
        b = own[t["id"]]
        if "extends" in t:
            b = own[t["extends"]] + "\n\n" + b
        out[t["id"]] = (b, t.get("positive"), t.get("negative"))
    return [out[i] for i in sorted(out)]


def render_conversation(conv):
    return "\n".join(f"{t['role']}: {t['text']}" for t in conv["turns"])


def render(template, conv):
    body, pos, neg = template
    out = body.replace("{conversation}", render_conversation(conv))
    if pos is not None:
        out = out.replace("{positive}", pos).replace("{negative}", neg)
    return out


def stub_generate(prompt, template_id, attempt):
    h = shash(prompt.encode(), SEED + attempt)
    dialogue = []
    for line in prompt.split("\n"):
        for p in ("teacher: ", "student: "):
            if line.startswith(p):
                dialogue += [t for t in tokenize(line[len(p):]) if len(t) >= 4]
                break
    pool = dialogue or tokenize(prompt)
    word = pool[(h >> 16) % len(pool)] if pool else "english"
    body = f"{OPENERS[h % 8]} Let's talk more about '{word}'. (prompt {template_id}, attempt {attempt})"
    form = (h >> 8) % 3
    if form == 0:
        return f'**Teacher:**\n\n"{body}"'
    if form == 1:
        return f'Teacher: "{body}"\n\nExplanation: this keeps the lesson moving.'
    return f'"{body}"'


PREFIX = re.compile(r"\*\*.*?:\*\*\n\n")


def clean(raw):
    s = raw
    while PREFIX.search(s):
        s = PREFIX.sub("", s)
    q = s.find('"')
    if q >= 0:
        s = s[q + 1:]
    return s.strip(" \t\n\r")


def bertscore(c, r):
    C = [vec(t, SEED) for t in stub_tokens(c)]
    R = [vec(t, SEED) for t in stub_tokens(r)]
    p = sum(max(cos(x, y) for y in R) for x in C) / len(C)
    rc = sum(max(cos(x, y) for x in C) for y in R) / len(R)
    return p, rc, (2 * p * rc / (p + rc) if p + rc != 0 else 0.0)


class Tok:
    def tokenize(self, text):
        return tokenize(text)


SCORER = rouge_scorer.RougeScorer(["rouge1", "rouge2", "rougeL", "rougeLsum"], tokenizer=Tok())


def metrics(response, conv):
    out = {}
    scores = SCORER.score(conv["reference"], response)
    for name in ["rouge1", "rouge2", "rougeL", "rougeLsum"]:
        s = scores[name]
        out[f"{name}_precision"] = s.precision
        out[f"{name}_recall"] = s.recall
        out[f"{name}_f1"] = s.fmeasure
    p, r, f = bertscore(response, conv["reference"])
    out.update(bertscore_precision=p, bertscore_recall=r, bertscore_f1=f)
    lp = -math.log(DIM)
    out.update(mi_value=(lp + lp) / 2, mi_forward_ppl=math.exp(-lp), mi_reverse_ppl=math.exp(-lp))
    return out


def main():
    templates = load_templates()
    convs = [json.loads(l) for l in CORPUS.read_text(encoding="utf-8").splitlines() if l.strip()]
    rows = []
    for conv in convs:
        cands = []
        for tid, tpl in enumerate(templates, start=1):
            prompt = render(tpl, conv)
            for a in range(ATTEMPTS):
                text = clean(stub_generate(prompt, tid, a))
                if text:
                    cands.append((tid, a, text))
        ctx = render_conversation(conv)
        cs, cp = sentence_vec(ctx), pooled_vec(ctx)
        scored = []
        for tid, a, text in cands:
            s = cos(cs, sentence_vec(text))
            t = cos(cp, pooled_vec(text))
            scored.append((0.5 * s + 0.5 * t, tid, a, text))
        ranked = sorted(scored, key=lambda x: -x[0])
        top = ranked[0]
        rows.append(
            {
                "conversation_id": conv["id"],
                "ranking": [[tid, a, c] for c, tid, a, _ in ranked],
                "response": top[3],
                "metrics": metrics(top[3], conv),
            }
        )
    keys = list(rows[0]["metrics"])
    agg = {k: sum(r["metrics"][k] for r in rows) / len(rows) for k in keys}
    print(json.dumps({"seed": SEED, "attempts": ATTEMPTS, "rows": rows, "aggregate": agg}, indent=1, ensure_ascii=False))


if __name__ == "__main__":
    main()
