# main.py
import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from config import OUTPUT_DIR_ENV, RunConfig, load_run_config
from data_io import (LABEL_NAMES, Batch, Dataset, generate_synthetic, load_dataset, save_dataset,
                     split_dataset)
from events import EPOCH_END, NEW_BEST, EventManager, progress_printer
from exceptions import EXIT_NUMERIC, EXIT_OK, DimeError, DimensionError, RecordError, UsageError, handle_dime_error
from experts import ExpertLossConfig
from frontend import FrontendConfig
from fusion import FusionConfig
from gating import GatingConfig
from metrics import EvalReport
from model import DimeModel
from save_load import Checkpoint, atomic_write_text, load_checkpoint, save_checkpoint
from tensor_core import check_gradients
from trainer import evaluate, model_from_checkpoint, predict, train, write_history

# Konfiguracja logowania
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)

logger = logging.getLogger(__name__)

DEBUG_LOGGERS = ('trainer', 'data_io', 'save_load', 'model', 'tensor_core')


class DimeArgumentParser(argparse.ArgumentParser):
    """Parser zgłaszający UsageError zamiast kończyć proces (kod wyjścia ustala main)."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _csv_list(value: str) -> List[str]:
    items = [item.strip() for item in value.split(',') if item.strip()]
    if not items:
        raise argparse.ArgumentTypeError("lista nie może być pusta")
    return items


def _key_value(value: str):
    if '=' not in value:
        raise argparse.ArgumentTypeError(f"oczekiwano postaci klucz=wartość, otrzymano '{value}'")
    key, _, val = value.partition('=')
    return key.strip(), val.strip()


def _output_dir(args, cfg: RunConfig) -> Path:
    return Path(args.output_dir or cfg.get('paths.output_dir') or os.environ.get(OUTPUT_DIR_ENV, 'runs'))


def _echo_run_config(cfg: RunConfig, args) -> Path:
    """Zapisuje efektywną konfigurację do run_config.json w katalogu wyjściowym."""
    out_dir = _output_dir(args, cfg)
    cfg.set('paths.output_dir', str(out_dir))
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / 'run_config.json'
    cfg.save_config(str(path))
    return path


def _apply_overrides(cfg: RunConfig, args, mapping) -> None:
    """Flagi podane w linii poleceń wygrywają z plikiem konfiguracyjnym."""
    for attr, key in mapping:
        value = getattr(args, attr, None)
        if value is not None:
            cfg.set(key, value)


# --- gen-synth ---

def cmd_gen_synth(args) -> int:
    cfg = load_run_config(args.config)
    _apply_overrides(cfg, args, [
        ('mode', 'synthetic.dominance'), ('targets', 'synthetic.targets'), ('n', 'synthetic.n_per_class_per_target'),
        ('seed', 'synthetic.seed'), ('d_text', 'synthetic.d_text'), ('d_visual', 'synthetic.d_visual'),
        ('noise', 'synthetic.noise_sigma'), ('n_classes', 'synthetic.n_classes'),
    ])
    synth = cfg.synthetic_config()
    if args.out and not args.output_dir:
        # konfiguracja ląduje obok wskazanego pliku
        out_path = Path(args.out)
        out_dir = out_path.parent
    else:
        out_dir = _output_dir(args, cfg)
        out_path = Path(args.out) if args.out else out_dir / f"synthetic_{synth.dominance}.jsonl"
    ds = generate_synthetic(synth)

    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, str(out_path))
    cfg.set('paths.dataset', str(out_path))
    cfg.set('paths.output_dir', str(out_dir))
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.save_config(str(out_dir / 'run_config.json'))

    print(f"Zapisano {len(ds)} rekordów do {out_path}")
    for target, counts in ds.summary().items():
        print(f"  {target}: " + ', '.join(f"{name}={n}" for name, n in counts.items()))
    return EXIT_OK


# --- train ---

def _model_configs(cfg: RunConfig, ds: Dataset):
    if cfg.get('frontend.d_text_in') != ds.d_text or cfg.get('frontend.d_visual_in') != ds.d_visual:
        logger.info(f"Dopasowuję wymiary wejścia frontendu do zbioru: {ds.d_text}/{ds.d_visual}")
        cfg.set('frontend.d_text_in', ds.d_text)
        cfg.set('frontend.d_visual_in', ds.d_visual)
    cfg.set('fusion.d_in', cfg.get('frontend.d_common'))
    cfg.validate_config()
    return cfg.frontend_config(), cfg.fusion_config(), cfg.expert_config(), cfg.gating_config()


def _split_overrides(cfg: RunConfig, args) -> None:
    split = getattr(args, 'split', None)
    hold_out = getattr(args, 'hold_out', None)
    if hold_out is not None:
        # --hold-out bez --split oznacza zero-shot
        if split in (None, 'all'):
            split = 'zero-shot'
        elif split != 'zero-shot':
            raise UsageError(f"--hold-out wymaga --split zero-shot, podano --split {split}")
    if split in ('in-target', 'zero-shot'):
        cfg.set('split.mode', split.replace('-', '_'))
    if hold_out is not None:
        cfg.set('split.held_out_targets', hold_out)
    if getattr(args, 'split_seed', None) is not None:
        cfg.set('split.seed', args.split_seed)


def _report_files(report: EvalReport, out_dir: Path, prefix: str) -> dict:
    return {out_dir / f"{prefix}_report.tsv": report.to_table(),
            out_dir / f"{prefix}_report.jsonl": report.to_jsonl()}


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    _apply_overrides(cfg, args, [
        ('dataset', 'paths.dataset'), ('epochs', 'train.max_epochs'), ('lr', 'train.lr'),
        ('batch_size', 'train.batch_size'), ('seed', 'train.seed'), ('precision', 'train.precision'),
        ('patience', 'train.patience'), ('workers', 'train.workers'),
        ('d_model', 'fusion.d_model'), ('heads', 'fusion.n_heads'), ('layers', 'fusion.n_layers'),
        ('margin', 'experts.margin_m'), ('tau', 'gating.tau'),
    ])
    if args.no_clip:
        cfg.set('train.clip_norm', None)
    if args.ablate_alignment:
        cfg.set('ablate_alignment', True)
    _split_overrides(cfg, args)
    dataset_path = cfg.get('paths.dataset')
    if not dataset_path:
        raise UsageError("Nie podano ścieżki do zbioru danych (--dataset lub paths.dataset)")
    out_dir = _output_dir(args, cfg)
    cfg.set('paths.output_dir', str(out_dir))

    ds = load_dataset(dataset_path)
    frontend, fusion, experts, gating = _model_configs(cfg, ds)
    train_cfg = cfg.train_config()
    split = cfg.split_spec()
    train_ds, dev_ds, test_ds = split_dataset(ds, split)

    model = DimeModel(frontend, fusion, experts, gating, seed=cfg.get('model.seed', 0),
                      dtype=np.float32 if train_cfg.precision == 'f32' else np.float64,
                      ablate_alignment=cfg.get('ablate_alignment', False))
    events = EventManager()
    events.register_listener(EPOCH_END, progress_printer(train_cfg.max_epochs))
    events.register_listener(NEW_BEST, lambda epoch, dev_macro_f1: logger.debug(
        f"Nowy najlepszy model w epoce {epoch} ({dev_macro_f1:.4f})"))

    best, history = train(model, train_ds, dev_ds, train_cfg, events)
    best.configs['split'] = {'mode': split.mode, 'ratios': list(split.ratios),
                             'held_out_targets': split.held_out_targets, 'seed': split.seed}
    dev_report = evaluate(model, dev_ds, workers=train_cfg.workers)
    test_report = evaluate(model, test_ds, workers=train_cfg.workers)

    # wszystkie wyniki powstają dopiero po udanym treningu
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(best, out_dir / 'checkpoint.dime')
    write_history(history, out_dir / 'history.tsv')
    for path, text in {**_report_files(dev_report, out_dir, 'dev'), **_report_files(test_report, out_dir, 'test')}.items():
        atomic_write_text(path, text)
    cfg.save_config(str(out_dir / 'run_config.json'))

    print(test_report.format_console())
    logger.info(f"Wyniki zapisano w: {out_dir}")
    return EXIT_OK


# --- eval ---

def _adopt_model_configs(cfg: RunConfig, configs: dict) -> None:
    """Przenosi do RunConfig konfigurację zapisaną razem z modelem."""
    for section in ('frontend', 'fusion', 'experts', 'gating', 'train', 'split'):
        if section in configs:
            cfg.config.setdefault(section, {}).update(configs[section])
    model_cfg = configs.get('model', {})
    cfg.set('model.seed', model_cfg.get('seed', 0))
    cfg.set('ablate_alignment', model_cfg.get('ablate_alignment', False))
    if 'precision' in model_cfg:
        cfg.set('train.precision', model_cfg['precision'])


def _load_model_for(ckpt_path: str, ds: Dataset) -> Tuple[DimeModel, Checkpoint]:
    ckpt = load_checkpoint(ckpt_path)
    frontend = ckpt.configs.get('frontend', {})
    expected = (frontend.get('d_text_in'), frontend.get('d_visual_in'))
    if expected != (ds.d_text, ds.d_visual):
        raise DimensionError("Wymiary zbioru nie pasują do checkpointu", (ds.d_text, ds.d_visual), expected)
    model = model_from_checkpoint(ckpt)
    return model, ckpt


def cmd_eval(args) -> int:
    cfg = load_run_config(args.config)
    ds = load_dataset(args.dataset)
    model, ckpt = _load_model_for(args.checkpoint, ds)
    _adopt_model_configs(cfg, ckpt.configs)

    part = ds
    if args.split == 'all' and args.hold_out:
        args.split = 'zero-shot'
    if args.split != 'all':
        _split_overrides(cfg, args)
        _, _, part = split_dataset(ds, cfg.split_spec())
    if args.meta_filter:
        key, value = args.meta_filter
        part = part.filter_meta(key, value)
        logger.info(f"Filtr meta {key}={value}: {len(part)} rekordów")

    report = evaluate(model, part, workers=args.workers or 1)
    out_dir = _output_dir(args, cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    for path, text in _report_files(report, out_dir, args.prefix).items():
        atomic_write_text(path, text)
    cfg.set('paths.dataset', args.dataset)
    cfg.set('paths.output_dir', str(out_dir))
    cfg.save_config(str(out_dir / 'run_config.json'))
    print(report.format_console())
    return EXIT_OK


# --- gradcheck ---

def build_gradcheck_model(d_model: int = 8, n_heads: int = 2, n_layers: int = 1, d_common: int = 8,
                          d_text: int = 12, d_visual: int = 10, seed: int = 0,
                          ablate_alignment: bool = False) -> DimeModel:
    """Mały model w float64 do sprawdzania gradientów."""
    return DimeModel(
        FrontendConfig(d_text_in=d_text, d_visual_in=d_visual, d_common=d_common, seed=seed),
        FusionConfig(d_in=d_common, d_model=d_model, n_heads=n_heads, n_layers=n_layers, d_ffn=2 * d_model),
        ExpertLossConfig(),
        GatingConfig(d_hidden=d_model),
        seed=seed, dtype=np.float64, ablate_alignment=ablate_alignment,
    )


def random_batch(model: DimeModel, n: int = 2, seed: int = 0) -> Batch:
    rng = np.random.default_rng(seed + 1)
    fc = model.frontend_config
    return Batch(ids=[f"g{i}" for i in range(n)], targets=['A'] * n,
                 labels=np.arange(n, dtype=np.int64) % len(LABEL_NAMES),
                 e_text=rng.standard_normal((n, fc.d_text_in)),
                 e_visual=rng.standard_normal((n, fc.d_visual_in)),
                 e_prompt=rng.standard_normal((n, fc.d_text_in)))


def run_gradcheck(model: DimeModel, batch: Batch, tol: float = 1e-4, seed: int = 0,
                  max_elements: Optional[int] = None):
    def build():
        # ta sama maska dropoutu i ten sam e_r przy każdym przebiegu
        return model.loss(batch, training=True, rng=np.random.default_rng(seed)).L_total

    return check_gradients(build, model.named_parameters(), tol=tol, max_elements=max_elements)


def cmd_gradcheck(args) -> int:
    if args.tol < 0:
        raise UsageError("--tol musi być nieujemne")
    model = build_gradcheck_model(d_model=args.d_model, n_heads=args.heads, n_layers=args.layers,
                                  d_common=args.d_common, seed=args.seed,
                                  ablate_alignment=args.ablate_alignment)
    report = run_gradcheck(model, random_batch(model, args.batch, args.seed), args.tol, args.seed,
                           args.max_elements)
    cfg = load_run_config(args.config)
    _adopt_model_configs(cfg, model.configs())
    _echo_run_config(cfg, args)
    for group, err in report.group_errors(model.parameter_groups()).items():
        status = 'OK' if err < args.tol else 'BŁĄD'
        print(f"{group:<20} max rel err = {err:.3e}  {status}")
    skipped = sum(e.n_skipped for e in report.entries.values())
    if skipped:
        print(f"Pominięto {skipped} wpisów w punktach nieróżniczkowalnych")
    if not report.passed:
        logger.error(f"Sprawdzanie gradientów nie powiodło się: {report.failing()}")
        return EXIT_NUMERIC
    return EXIT_OK


# --- predict ---

def cmd_predict(args) -> int:
    ds = load_dataset(args.dataset)
    matches = [i for i, r in enumerate(ds.records) if r.id == args.id]
    if not matches:
        raise RecordError("nie ma takiego rekordu w zbiorze", args.id)
    model, ckpt = _load_model_for(args.checkpoint, ds)
    prediction = predict(model, ds.subset(matches))
    cfg = load_run_config(args.config)
    _adopt_model_configs(cfg, ckpt.configs)
    cfg.set('paths.dataset', args.dataset)
    _echo_run_config(cfg, args)
    probs, pi = prediction.probs[0], prediction.pi[0]
    label = int(prediction.labels[0])
    print(f"{args.id}: {LABEL_NAMES[label]}")
    print("prawdopodobieństwa: " + ', '.join(f"{name}={p:.4f}" for name, p in zip(LABEL_NAMES, probs)))
    gate_names = ('pi_t', 'pi_v', 'pi_tv')
    print("bramka: " + ', '.join(f"{name}={g:.4f}" for name, g in zip(gate_names, pi)))
    return EXIT_OK


def parse_arguments(argv=None):
    """Parsuje argumenty wiersza poleceń."""
    parser = DimeArgumentParser(prog='dime', description='Wieloekspertowa detekcja stanowiska na osadzeniach')
    parser.add_argument('--debug', action='store_true', help='Włącza tryb debug')
    parser.add_argument('--config', help='Ścieżka do pliku konfiguracyjnego JSON')
    sub = parser.add_subparsers(dest='command', parser_class=DimeArgumentParser)
    sub.required = True

    gen = sub.add_parser('gen-synth', help='Generuje syntetyczny zbiór osadzeń')
    gen.add_argument('--mode', choices=['text_dominant', 'visual_dominant', 'shared', 'mixed'])
    gen.add_argument('--targets', type=_csv_list)
    gen.add_argument('--n', type=int, help='Liczba rekordów na klasę i cel')
    gen.add_argument('--seed', type=int)
    gen.add_argument('--d-text', type=int)
    gen.add_argument('--d-visual', type=int)
    gen.add_argument('--noise', type=float)
    gen.add_argument('--n-classes', type=int)
    gen.add_argument('--out', help='Plik wynikowy (domyślnie w katalogu wyjściowym)')
    gen.add_argument('--output-dir')
    gen.set_defaults(func=cmd_gen_synth)

    tr = sub.add_parser('train', help='Trenuje model i zapisuje checkpoint oraz raporty')
    tr.add_argument('--dataset')
    tr.add_argument('--output-dir')
    tr.add_argument('--split', choices=['in-target', 'zero-shot'])
    tr.add_argument('--hold-out', type=_csv_list)
    tr.add_argument('--split-seed', type=int)
    tr.add_argument('--epochs', type=int)
    tr.add_argument('--lr', type=float)
    tr.add_argument('--batch-size', type=int)
    tr.add_argument('--patience', type=int)
    tr.add_argument('--seed', type=int)
    tr.add_argument('--precision', choices=['f32', 'f64'])
    tr.add_argument('--workers', type=int)
    tr.add_argument('--d-model', type=int)
    tr.add_argument('--heads', type=int)
    tr.add_argument('--layers', type=int, choices=[1, 2])
    tr.add_argument('--margin', type=float)
    tr.add_argument('--tau', type=float)
    tr.add_argument('--no-clip', action='store_true', help='Wyłącza przycinanie gradientów')
    tr.add_argument('--ablate-alignment', action='store_true', help='Wariant bez eksperta wyrównania')
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser('eval', help='Ewaluuje checkpoint na zbiorze')
    ev.add_argument('--checkpoint', required=True)
    ev.add_argument('--dataset', required=True)
    ev.add_argument('--output-dir')
    ev.add_argument('--split', choices=['all', 'in-target', 'zero-shot'], default='all')
    ev.add_argument('--hold-out', type=_csv_list)
    ev.add_argument('--split-seed', type=int)
    ev.add_argument('--meta-filter', type=_key_value, help='Np. mode=shared')
    ev.add_argument('--workers', type=int)
    ev.add_argument('--prefix', default='eval')
    ev.set_defaults(func=cmd_eval)

    gc = sub.add_parser('gradcheck', help='Porównuje gradienty z różnicami skończonymi')
    gc.add_argument('--d-model', type=int, default=8)
    gc.add_argument('--heads', type=int, default=2)
    gc.add_argument('--layers', type=int, choices=[1, 2], default=1)
    gc.add_argument('--d-common', type=int, default=8)
    gc.add_argument('--batch', type=int, default=2)
    gc.add_argument('--tol', type=float, default=1e-4)
    gc.add_argument('--seed', type=int, default=0)
    gc.add_argument('--max-elements', type=int)
    gc.add_argument('--ablate-alignment', action='store_true')
    gc.add_argument('--output-dir')
    gc.set_defaults(func=cmd_gradcheck)

    pr = sub.add_parser('predict', help='Stanowisko i wagi bramki dla jednego rekordu')
    pr.add_argument('--checkpoint', required=True)
    pr.add_argument('--dataset', required=True)
    pr.add_argument('--id', required=True)
    pr.add_argument('--output-dir')
    pr.set_defaults(func=cmd_predict)

    return parser.parse_args(argv)


def main(argv=None) -> int:
    try:
        args = parse_arguments(argv)
        if args.debug:
            for name in DEBUG_LOGGERS:
                logging.getLogger(name).setLevel(logging.DEBUG)
        return args.func(args)
    except Exception as e:
        message, code = handle_dime_error(e)
        logger.error(message)
        if not isinstance(e, (DimeError, OSError)):
            logger.critical(f"Krytyczny błąd: {e}", exc_info=True)
        print(message, file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
