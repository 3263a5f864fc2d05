"""Smoke test for the proofgraph extension module.

Builds the cdylib with cargo, copies it next to this script as
proofgraph.so, imports it and exercises the main entry points.
"""
import pathlib
import shutil
import subprocess
import sys

HERE = pathlib.Path(__file__).resolve().parent
ROOT = HERE.parent


def build():
    subprocess.run(
        ["cargo", "build", "--release", "-p", "proofgraph-python", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    lib = ROOT / "target" / "release" / "libproofgraph.so"
    shutil.copy(lib, HERE / "proofgraph.so")
    sys.path.insert(0, str(HERE))


def main():
    if "--no-build" not in sys.argv:
        build()
    import proofgraph as pg

    steps = pg.parse_proof("sent2 & sent1 -> int1: Bob is big; int1 & sent3 -> hypothesis;", 3)
    assert steps[0] == (["sent1", "sent2"], "int1", "Bob is big"), steps
    assert pg.parse_proof(pg.serialize_proof(steps), 3) == steps
    assert pg.normalize_sentence("  Bob  is Big. ") == "bob is big"
    assert pg.negate("Bob is big.") == "I don't think bob is big."

    ctx = ["Bob is red.", "If Bob is red then Bob is big.", "If Bob is big then Bob is cold."]
    g = pg.ProofGraph("Bob is cold.", ctx)
    outcome, big = g.execute([g.fact(1), g.fact(2)], "Bob is big.", 0.9)
    assert outcome == "created"
    assert g.execute([big, g.fact(3)], None, 0.8)[0] == "improved"
    assert abs(g.hypothesis_score() - 0.8) < 1e-12
    assert g.is_acyclic() and g.is_consistent()
    assert g.extract_proof() is not None
    try:
        g.execute([99], None, 0.5)
        raise AssertionError("expected IndexError")
    except IndexError:
        pass

    r = pg.run_search("Bob is cold.", ctx)
    assert r["proof_score"] == 1.0, r
    assert r["proof"] == "sent1 & sent2 -> int1: Bob is big.; sent3 & int1 -> hypothesis;", r["proof"]

    data = pg.generate_dataset(12, seed=3)
    assert len(data) == 12 and all("hypothesis" in d for d in data)
    gold = next(d for d in data if d["answer"] == "proved" and d.get("proof"))
    s = pg.score_example(gold["proof"], gold["proof"], gold["hypothesis"], len(gold["context"]))
    assert s["overall_allcorrect"], s

    bm = pg.Bm25(["the cat sat", "the dog ran", "a cat and a dog"])
    top = bm.top_k("cat", 2)
    assert [i for i, _ in top] == [0, 2], top
    print("smoke test passed")


if __name__ == "__main__":
    main()
