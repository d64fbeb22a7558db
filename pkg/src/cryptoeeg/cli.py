"""Command-line front end.

Offline: ``keygen`` and ``train``. Online: ``encrypt`` (data owner, public
key), ``predict`` (service, public key only), ``decrypt`` (key owner).
``evaluate`` and ``bench`` report quality and timing.
"""
from __future__ import annotations

import argparse
import json
import logging
import random
import sys
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path

import numpy as np

from . import data, encinfer, evaluate, network, paillier
from .fixedpoint import DEFAULT_FRAC_BITS, EncodingOverflowError, FixedPointCodec

log = logging.getLogger("cryptoeeg")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_CRYPTO = 4

MODEL_VERSION = 1
PUBLIC_KEY_FILE = "public.json"
PRIVATE_KEY_FILE = "private.json"


class UsageError(Exception):
    pass


# -- helpers ----------------------------------------------------------------

def _existing(path: str | None, what: str) -> Path:
    if path is None:
        raise UsageError(f"{what} path is required")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


def _public_key_path(args) -> Path:
    if args.public_key:
        return _existing(args.public_key, "public key")
    if args.keys_dir:
        return _existing(str(Path(args.keys_dir) / PUBLIC_KEY_FILE), "public key")
    raise UsageError("give --public-key or --keys-dir")


def _private_key_path(args) -> Path:
    if args.private_key:
        return _existing(args.private_key, "private key")
    if args.keys_dir:
        return _existing(str(Path(args.keys_dir) / PRIVATE_KEY_FILE), "private key")
    raise UsageError("give --private-key or --keys-dir")


def _crypto_rng(args, tag: str = "") -> random.Random:
    if args.deterministic_crypto:
        log.warning("--deterministic-crypto: ciphertext randomness is reproducible and NOT secure")
        return random.Random(f"{args.seed}:{tag}")
    return paillier.system_rng()


def save_model(path: Path, model: network.NetworkModel, qmodel: encinfer.QuantizedModel,
               channels: list[str], norm: data.Normalization, n_classes: int) -> None:
    doc = {
        "version": MODEL_VERSION,
        "dims": list(model.dims),
        "activation_mode": model.activation_mode,
        "frac_bits": model.frac_bits,
        "n_classes": n_classes,
        "channels": channels,
        "normalization": norm.to_dict(channels),
        "real": model.to_dict(),
        "quantized": qmodel.to_dict(),
    }
    path.write_text(json.dumps(doc, indent=1) + "\n")


def load_model(path: Path) -> dict:
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise data.DataError(f"{path}: not a model document ({exc})") from exc
    if doc.get("version") != MODEL_VERSION:
        raise data.DataError(f"{path}: unsupported model version {doc.get('version')!r}")
    try:
        doc["real"] = network.NetworkModel.from_dict(doc["real"])
        doc["quantized"] = encinfer.QuantizedModel.from_dict(doc["quantized"])
        doc["normalization"] = data.Normalization.from_dict(doc["normalization"])
    except (KeyError, TypeError, ValueError) as exc:
        raise data.DataError(f"{path}: malformed model document ({exc})") from exc
    if doc["quantized"].frac_bits != doc["frac_bits"]:
        raise data.DataError(f"{path}: frac_bits disagree between header and quantized weights")
    return doc


def _encrypt_row(pk, codec, seed_tag, x):
    rng = random.Random(seed_tag) if seed_tag is not None else None
    return encinfer.encrypt_sample(pk, codec, x, rng)


# -- subcommands ------------------------------------------------------------

def cmd_keygen(args) -> int:
    out = Path(args.keys_dir or args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    rng = _crypto_rng(args, "keygen")
    pk, sk = paillier.keygen(args.bit_length, rng, random_g=args.random_g)
    paillier.save_public_key(pk, out / PUBLIC_KEY_FILE)
    paillier.save_private_key(sk, out / PRIVATE_KEY_FILE)
    print(f"wrote {out / PUBLIC_KEY_FILE} and {out / PRIVATE_KEY_FILE} ({pk.bit_length}-bit modulus)")
    return EXIT_OK


def cmd_synth(args) -> int:
    n_info = args.informative
    ds = data.synthetic_blobs(args.samples, n_info, args.classes, separation=args.separation,
                              n_noise=args.channels - n_info, trend=args.trend, seed=args.seed)
    data.write_csv(ds, _out(args, "synthetic.csv"), args.label_column)
    print(f"wrote {len(ds)} samples x {ds.n_channels} channels to {args.out}")
    return EXIT_OK


def _out(args, default: str) -> Path:
    p = Path(args.out or default)
    if p.parent and not p.parent.exists():
        p.parent.mkdir(parents=True, exist_ok=True)
    return p


def cmd_train(args) -> int:
    ds = data.load_csv(_existing(args.data, "data"), args.label_column)
    out = Path(args.out or "model")
    out.mkdir(parents=True, exist_ok=True)
    k = min(args.channels_k, ds.n_channels)
    if k != args.channels_k:
        log.warning("only %d channels available; keeping all", ds.n_channels)
    reduced, ranking = data.select_channels(ds, k)
    train_raw, test_raw = data.split(reduced, args.train_fraction, args.seed)
    stats = data.fit_normalization(train_raw.features)
    train_ds = data.normalize(train_raw, stats)
    test_ds = data.normalize(test_raw, stats)

    n_o = ds.n_classes
    cfg = network.TrainConfig(iters_num=args.iters, batch_size=args.batch, eta0=args.eta0, seed=args.seed)
    model = network.init_model(k, args.hidden, n_o, args.activation, args.seed, args.frac_bits)
    lo, hi = network.suggest_hidden_size(k, n_o)
    if not lo <= args.hidden <= hi:
        log.info("hidden width %d is outside the heuristic range [%d, %d]", args.hidden, lo, hi)
    model, history = network.train(model, train_ds.features, train_ds.labels, cfg)
    qmodel = network.export_model(model, args.frac_bits)

    save_model(out / "model.json", model, qmodel, reduced.channel_names, stats, n_o)
    (out / "history.csv").write_text(history.to_csv())
    data.save_json(ranking.to_dict(), out / "channel_ranking.json")
    data.save_json(stats.to_dict(reduced.channel_names), out / "normalization.json")
    data.write_csv(test_raw, out / "test.csv", args.label_column)

    last = history[-1]
    test_acc = network.accuracy(model, test_ds.features, test_ds.labels)
    print(f"epochs={len(history)} final_eta={last.eta:g} loss={last.loss:.4f} "
          f"train_acc={last.train_acc:.4f} test_acc={test_acc:.4f} "
          f"out_of_interval_preactivations={sum(r.excursions for r in history.records)}")
    print(f"wrote {out / 'model.json'}, history.csv, channel_ranking.json, normalization.json, test.csv")
    return EXIT_OK


def cmd_encrypt(args) -> int:
    pk = paillier.load_public_key(_public_key_path(args))
    doc = load_model(_existing(args.model, "model"))
    qmodel = doc["quantized"]
    qmodel.audit(pk.n)
    X = data.load_features_csv(_existing(args.data, "data"), doc["channels"], args.label_column)
    X = doc["normalization"].apply(X)
    codec = FixedPointCodec(qmodel.frac_bits, pk.n)
    tags = ([f"{args.seed}:encrypt:{i}" for i in range(len(X))] if args.deterministic_crypto
            else [None] * len(X))
    if args.deterministic_crypto:
        log.warning("--deterministic-crypto: ciphertext randomness is reproducible and NOT secure")
    fn = partial(_encrypt_row, pk, codec)
    if args.workers > 1 and len(X) > 1:
        with ProcessPoolExecutor(args.workers) as ex:
            vectors = list(ex.map(fn, tags, list(X)))
    else:
        vectors = [fn(t, x) for t, x in zip(tags, X)]
    out = _out(args, "encrypted.jsonl")
    encinfer.write_records(out, vectors, qmodel.frac_bits)
    print(f"encrypted {len(vectors)} samples -> {out}")
    return EXIT_OK


def cmd_predict(args) -> int:
    # the service side: only ever opens the public key
    pk = paillier.load_public_key(_public_key_path(args))
    doc = load_model(_existing(args.model, "model"))
    qmodel = doc["quantized"]
    qmodel.audit(pk.n)
    records = encinfer.read_records(_existing(args.data, "ciphertext file"))
    for i, (v, fb) in enumerate(records, start=1):
        if fb != qmodel.frac_bits:
            raise encinfer.RecordFormatError(f"record {i}: frac_bits {fb} != model {qmodel.frac_bits}")
        if v.width != qmodel.n_i:
            raise encinfer.RecordFormatError(f"record {i}: width {v.width} != model input {qmodel.n_i}")
    logits = encinfer.enc_forward_batch(pk, qmodel, [v for v, _ in records], args.workers)
    out = _out(args, "logits.jsonl")
    encinfer.write_records(out, logits, qmodel.frac_bits)
    print(f"classified {len(logits)} encrypted samples -> {out}")
    return EXIT_OK


def cmd_decrypt(args) -> int:
    """Level-4 records become class predictions; other levels decode to plain values."""
    sk = paillier.load_private_key(_private_key_path(args))
    records = encinfer.read_records(_existing(args.data, "ciphertext file"))
    out = _out(args, "predictions.csv")
    lines = []
    for i, (v, fb) in enumerate(records, start=1):
        codec = FixedPointCodec(fb, sk.public.n)
        try:
            if v.level == encinfer.LEVEL_LOGITS:
                values, cls = encinfer.decrypt_logits(sk, codec, v)
                row = [str(cls)]
            else:
                values = [codec.decode(paillier.decrypt(sk, c), v.level) for c in v.cts]
                row = []
        except (paillier.PaillierError, ValueError) as exc:
            raise encinfer.RecordFormatError(f"record {i}: {exc}") from exc
        if i == 1:
            head = ["sample"] + (["predicted"] if row else [])
            prefix = "logit" if row else "value"
            lines.append(",".join(head + [f"{prefix}_{k}" for k in range(1, len(values) + 1)]))
        lines.append(",".join([str(i)] + row + [repr(x) for x in values]))
    out.write_text("\n".join(lines) + ("\n" if lines else ""))
    print(f"decrypted {len(records)} records -> {out}")
    return EXIT_OK


def _read_predictions(path: Path) -> np.ndarray:
    import csv
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "predicted" not in reader.fieldnames:
            raise data.DataError(f"{path}: no 'predicted' column")
        preds = []
        for rowno, row in enumerate(reader, start=2):
            try:
                preds.append(int(row["predicted"]))
            except (TypeError, ValueError):
                raise data.DataError(f"{path}: row {rowno}: bad prediction {row['predicted']!r}") from None
    return np.array(preds, dtype=int)


def cmd_evaluate(args) -> int:
    truth = data.load_csv(_existing(args.data, "truth CSV"), args.label_column)
    pred = _read_predictions(_existing(args.predictions, "predictions CSV"))
    if len(pred) != len(truth):
        raise data.DataError(f"{len(truth)} truth rows but {len(pred)} predictions")
    k = max(truth.n_classes, int(pred.max()) if pred.size else 1, args.classes or 0)
    cm = evaluate.confusion(truth.labels, pred, k)
    report = evaluate.metrics(cm)
    print(cm.render())
    print()
    print(report.table())
    miscls = int(len(pred) - np.trace(cm.counts))
    if args.train_size:
        rates = evaluate.error_rate(miscls, args.train_size, len(pred))
        print(f"error rate: literal (per training sample) {100 * rates['literal']:.2f}%, "
              f"standard (per test sample) {100 * rates['standard']:.2f}%")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "confusion.csv").write_text(cm.to_csv())
        (out / "metrics.csv").write_text(report.to_csv())
    return EXIT_OK


def cmd_bench(args) -> int:
    pk = paillier.load_public_key(_public_key_path(args))
    sk = paillier.load_private_key(_private_key_path(args))
    doc = load_model(_existing(args.model, "model"))
    qmodel = doc["quantized"]
    qmodel.audit(pk.n)
    X = data.load_features_csv(_existing(args.data, "data"), doc["channels"], args.label_column)
    X = doc["normalization"].apply(X)
    report, _ = evaluate.bench(pk, sk, qmodel, X, args.n, _crypto_rng(args, "bench"))
    print(report.table())
    if args.out:
        _out(args, "timing.csv").write_text(report.to_csv())
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cryptoeeg", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, *, keys=False, crypto=False, workers=False):
        sp.add_argument("--data")
        sp.add_argument("--out")
        sp.add_argument("--label-column", default="label")
        sp.add_argument("--seed", type=int, default=0)
        if keys:
            sp.add_argument("--keys-dir")
            sp.add_argument("--public-key")
            sp.add_argument("--private-key")
            sp.add_argument("--model")
        if crypto:
            sp.add_argument("--deterministic-crypto", action="store_true",
                            help="derive ciphertext randomness from --seed (testing only; insecure)")
        if workers:
            sp.add_argument("--workers", type=int, default=1)

    sp = sub.add_parser("keygen", help="generate a Paillier key pair")
    common(sp, keys=True, crypto=True)
    sp.add_argument("--bit-length", type=int, default=paillier.DEFAULT_KEYSIZE)
    sp.add_argument("--random-g", action="store_true", help="sample g instead of using n+1")
    sp.set_defaults(func=cmd_keygen)

    sp = sub.add_parser("synth", help="write a synthetic labelled feature CSV")
    common(sp)
    sp.add_argument("--samples", type=int, default=12800)
    sp.add_argument("--channels", type=int, default=64)
    sp.add_argument("--informative", type=int, default=44)
    sp.add_argument("--classes", type=int, default=4)
    sp.add_argument("--separation", type=float, default=0.5)
    sp.add_argument("--trend", type=float, default=0.1)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="train on plaintext data and export the quantized model")
    common(sp)
    sp.add_argument("--channels-k", type=int, default=44)
    sp.add_argument("--hidden", type=int, default=20)
    sp.add_argument("--train-fraction", type=float, default=0.8)
    sp.add_argument("--iters", type=int, default=20000)
    sp.add_argument("--batch", type=int, default=100)
    sp.add_argument("--eta0", type=float, default=0.2)
    sp.add_argument("--frac-bits", type=int, default=DEFAULT_FRAC_BITS)
    sp.add_argument("--activation", choices=network.ACTIVATION_MODES, default=network.LINEAR_APPROX)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("encrypt", help="normalize, encode and encrypt samples (public key)")
    common(sp, keys=True, crypto=True, workers=True)
    sp.set_defaults(func=cmd_encrypt)

    sp = sub.add_parser("predict", help="classify encrypted samples (public key only)")
    common(sp, keys=True, workers=True)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("decrypt", help="decrypt logits into class predictions (private key)")
    common(sp, keys=True)
    sp.set_defaults(func=cmd_decrypt)

    sp = sub.add_parser("evaluate", help="confusion matrix and precision/recall/F1")
    common(sp)
    sp.add_argument("--predictions")
    sp.add_argument("--classes", type=int)
    sp.add_argument("--train-size", type=int, help="also report the error rate per training sample")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("bench", help="time encrypt / inference / decrypt stages")
    common(sp, keys=True, crypto=True)
    sp.add_argument("-n", type=int, default=100)
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (paillier.PaillierError, EncodingOverflowError) as exc:
        print(f"crypto error: {exc}", file=sys.stderr)
        return EXIT_CRYPTO
    except (data.DataError, encinfer.RecordFormatError, network.TrainingDivergedError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
