"""Time the expensive stages (one training epoch, greedy and LM decoding) on this machine.

Useful for sizing a sweep before launching it:

    python scripts/time_stages.py configs/acceptance.yaml
"""
import argparse
import dataclasses
import time

from wspbench.acoustic import AcousticModel, train
from wspbench.decode import beam_decode, greedy_decode
from wspbench.harness.config import load_config
from wspbench.harness.experiments import Workbench


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--n-decode", type=int, default=50)
    args = ap.parse_args(argv)
    wb = load_config(args.config).workbench
    bench = Workbench(wb)

    t = time.perf_counter()
    train_set, dev, test = bench.train, bench.dev, bench.test
    lm = bench.lm
    print(f"corpora + LM: {time.perf_counter() - t:.1f}s ({len(train_set)}/{len(dev)}/{len(test)} utterances)")

    model = AcousticModel.init(wb.data.voice.dim, wb.model.context, wb.model.hidden, seed=0)
    cfg = dataclasses.replace(wb.pretrain, max_epochs=1)
    # first call compiles the numba kernels
    train(model, train_set[:8], [], cfg)
    t = time.perf_counter()
    model, _ = train(model, train_set, dev, cfg)
    print(f"one pretraining epoch with dev evaluation: {time.perf_counter() - t:.1f}s")

    logps = [model.forward(u.frames) for u in test[: args.n_decode]]
    beam_decode(logps[0], lm, wb.decoder)
    t = time.perf_counter()
    for lp in logps:
        greedy_decode(lp)
    print(f"greedy decode: {1000 * (time.perf_counter() - t) / len(logps):.2f} ms/utt")
    t = time.perf_counter()
    for lp in logps:
        beam_decode(lp, lm, wb.decoder)
    print(f"LM beam decode (width {wb.decoder.beam_width}): {1000 * (time.perf_counter() - t) / len(logps):.1f} ms/utt")


if __name__ == "__main__":
    main()
