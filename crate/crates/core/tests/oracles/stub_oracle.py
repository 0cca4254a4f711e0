"""Stub embedding rule and greedy matching, for the constants in stub_oracle.rs.

    python3 crates/core/tests/oracles/stub_oracle.py
"""

import math, re, struct
M=(1<<64)-1
def fnv(h, bs):
    for b in bs:
        h ^= b; h = (h*0x100000001b3) & M
    return h
def shash(bs, seed): return fnv(fnv(0xcbf29ce484222325, bs), struct.pack('<Q', seed))
def vec(key, seed):
    st = shash(key.encode(), seed); out=[]
    for _ in range(16):
        st = (st + 0x9e3779b97f4a7c15) & M
        z = st
        z = ((z ^ (z>>30)) * 0xbf58476d1ce4e5b9) & M
        z = ((z ^ (z>>27)) * 0x94d049bb133111eb) & M
        z ^= z>>31
        out.append((z>>11) * (1.0/(1<<53)) * 2.0 - 1.0)
    n = math.sqrt(sum(x*x for x in out))
    return [x/n for x in out]
def toks(t):
    r=[w.lower() for w in re.split(r'[^0-9A-Za-z]+', t) if w]
    return r if r else [t]
def sent(t, seed):
    ts=toks(t); keys=ts+[ts[i]+' '+ts[i+1] for i in range(len(ts)-1)]
    s=[0.0]*16
    for k in keys:
        for i,x in enumerate(vec(k,seed)): s[i]+=x
    n=math.sqrt(sum(x*x for x in s)); return [x/n for x in s]
def pooled(t, seed):
    rows=[vec(k,seed) for k in toks(t)]
    return [sum(r[i] for r in rows)/len(rows) for i in range(16)]
def cos(a,b):
    d=sum(x*y for x,y in zip(a,b)); na=math.sqrt(sum(x*x for x in a)); nb=math.sqrt(sum(x*x for x in b))
    return max(-1.0,min(1.0,d/(na*nb)))
def dual(ctx,cand,seed):
    s=cos(sent(ctx,seed),sent(cand,seed)); t=cos(pooled(ctx,seed),pooled(cand,seed)); return s,t,(s+t)/2
def bert(c,r,seed):
    C=[vec(k,seed) for k in toks(c)]; R=[vec(k,seed) for k in toks(r)]
    P=sum(max(cos(x,y) for y in R) for x in C)/len(C)
    Rc=sum(max(cos(x,y) for x in C) for y in R)/len(R)
    return P,Rc,(2*P*Rc/(P+Rc) if P+Rc!=0 else 0.0)
print("a0", repr(vec("a",0)[:4]))
print("b0", repr(vec("b",0)[:4]))
print("dual", [repr(x) for x in dual("teacher: let's practice prepositions","practice prepositions now",0)])
print("dual7", [repr(x) for x in dual("student: I'm really cold","Would you like a break?",7)])
print("bert", [repr(x) for x in bert("a b","a c",0)])
