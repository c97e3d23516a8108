"""Command-line entry point: ``gevadapt <subcommand> [--config PATH] [--set s.k=v] ...``.

Exit codes: 0 success, 1 other library error, 2 config parse failure,
3 validation failure, 4 numerical failure, 5 gradcheck tolerance breach.

Seeding tree: the run seed (``run.seed``, overridden by ``--seed``) feeds
``numpy.random.SeedSequence``; each purpose below draws its scene seeds from
the child sequence with that spawn key, so purposes never share scenes::

    0 simulate   1 mask pretraining   2 AM training   3 adaptation
    4 held-out evaluation             5 eval

Network initializations use the explicit ``masknet.seed`` / ``am.seed``.
"""
from __future__ import annotations

import argparse
import configparser
import os
import sys
from dataclasses import replace

import numpy as np

from . import adapt, am, beamform, linalg, maskestim, nn, sim
from .errors import (FormatError, GevAdaptError, InvalidConfigError, InvalidInputError,
                     NotFoundError, NumericalError)
from .grad import check
from .grad.pipeline import System
from .signal import StftConfig, istft, read_wav, stft, write_wav

EXIT_OK, EXIT_ERROR, EXIT_PARSE, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_GRADCHECK = 0, 1, 2, 3, 4, 5

PURPOSES = {"simulate": 0, "mask": 1, "am": 2, "adapt": 3, "heldout": 4, "eval": 5}


class ParseError(GevAdaptError):
    pass


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text: str) -> tuple:
    return tuple(int(t) for t in text.replace(" ", "").split(",") if t)


def _strs(text: str) -> tuple:
    return tuple(t.strip() for t in text.split(",") if t.strip())


# section -> key -> (parser, default)
SCHEMA = {
    "run": {"seed": (int, "0")},
    "stft": {"sample_rate": (int, "16000"), "win_len": (int, "400"), "hop": (int, "160"),
             "dft_size": (int, "400")},
    "scene": {"n_channels": (int, "6"), "duration": (float, "1.0"), "snr_db": (float, "0.0"),
              "noise_kind": (str, "coherent_point"), "n_classes": (int, "8"),
              "max_delay": (int, "6"), "sensor_db": (float, "-25.0"),
              "speakers": (_strs, "A,B,C,D"), "n_scenes": (int, "4")},
    "masknet": {"hidden_dims": (_ints, "64,128,128"), "recurrent_first_layer": (_bool, "true"),
                "seed": (int, "0"), "epochs": (int, "60"), "lr": (float, "0.003"),
                "n_scenes": (int, "60")},
    "am": {"n_states": (int, "8"), "context": (int, "2"), "hidden_dims": (_ints, "128,128"),
           "seed": (int, "0"), "epochs": (int, "5"), "lr": (float, "0.001"),
           "n_scenes": (int, "40"), "utterance_norm": (_bool, "true")},
    "beamform": {"k_iters": (int, "5"), "loading": (float, "1e-6"), "variant": (str, "opt"),
                 "selector_channel": (int, "0")},
    "adapt": {"lr": (float, "0.01"), "epochs": (int, "20"), "target_mode": (str, "oracle"),
              "speaker": (str, "E"), "n_utterances": (int, "10"), "n_heldout": (int, "5")},
    "eval": {"speakers": (_strs, "A,B,C,D"), "n_scenes": (int, "10"),
             "ideal_masks": (_bool, "false")},
    "gradcheck": {"seeds": (int, "20"), "ops": (_strs, "")},
    "paths": {"mask_ckpt": (str, "mask.ckpt"), "am_ckpt": (str, "am.ckpt"),
              "input": (str, ""), "output": (str, "enhanced.wav"),
              "dump": (str, "")},
}


class RunConfig:
    """Validated view over the INI sections of :data:`SCHEMA`."""

    def __init__(self, values: dict):
        self.values = values

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    @classmethod
    def load(cls, path: str | None, overrides=()) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None)
        if path is not None:
            try:
                with open(path, encoding="utf-8") as fh:
                    parser.read_file(fh)
            except configparser.Error as exc:
                raise ParseError(f"{path}: {exc}") from exc
            except OSError as exc:
                raise ParseError(f"cannot read config {path}: {exc}") from exc
        for item in overrides:
            key, sep, value = item.partition("=")
            section, dot, name = key.strip().partition(".")
            if not sep or not dot or not section or not name:
                raise ParseError(f"--set expects section.key=value, got {item!r}")
            if not parser.has_section(section):
                if section in SCHEMA:
                    parser.add_section(section)
                else:
                    raise InvalidConfigError(f"unknown config section {section!r}")
            parser.set(section, name, value.strip())
        values = {}
        for section in parser.sections():
            if section not in SCHEMA:
                raise InvalidConfigError(f"unknown config section {section!r}")
            for name in parser[section]:
                if name not in SCHEMA[section]:
                    raise InvalidConfigError(f"unknown config key {section}.{name}")
        for section, keys in SCHEMA.items():
            values[section] = {}
            for name, (conv, default) in keys.items():
                raw = parser.get(section, name, fallback=default)
                try:
                    values[section][name] = conv(raw)
                except ValueError as exc:
                    raise InvalidConfigError(f"bad value for {section}.{name}: {exc}") from exc
        return cls(values)

    def stft_config(self) -> StftConfig:
        return StftConfig(**self["stft"])

    def scene_config(self, speaker: str, seed: int) -> sim.SceneConfig:
        s = self["scene"]
        if speaker not in sim.SPEAKERS:
            raise InvalidConfigError(f"unknown speaker {speaker!r}")
        return sim.SceneConfig(n_channels=s["n_channels"], duration=s["duration"],
                               snr_db=s["snr_db"], speaker=sim.SPEAKERS[speaker],
                               noise_kind=s["noise_kind"], n_classes=s["n_classes"],
                               seed=seed, max_delay=s["max_delay"], sensor_db=s["sensor_db"],
                               stft=self.stft_config())

    def mask_config(self) -> maskestim.MaskNetConfig:
        m = self["masknet"]
        return maskestim.MaskNetConfig(self.stft_config().n_bins, m["hidden_dims"],
                                       m["recurrent_first_layer"], m["seed"])

    def am_config(self) -> am.AmConfig:
        a = self["am"]
        return am.AmConfig(a["n_states"], a["context"], a["hidden_dims"], a["seed"],
                           utterance_norm=a["utterance_norm"])

    def variant(self) -> beamform.Variant:
        try:
            return beamform.Variant(self["beamform"]["variant"].lower())
        except ValueError as exc:
            raise InvalidConfigError(f"unknown beamformer variant {exc}") from exc


def scene_seeds(run_seed: int, purpose: str, n: int) -> list:
    seq = np.random.SeedSequence(run_seed, spawn_key=(PURPOSES[purpose],))
    return [int(s) for s in seq.generate_state(n)] if n > 0 else []


def make_scenes(cfg: RunConfig, purpose: str, speakers, n: int) -> list:
    seeds = scene_seeds(cfg["run"]["seed"], purpose, n)
    return [sim.make_scene(cfg.scene_config(speakers[i % len(speakers)], s))
            for i, s in enumerate(seeds)]


def _out_path(out_dir: str, name: str) -> str:
    return name if os.path.isabs(name) else os.path.join(out_dir, name)


def _report(pairs: dict, stream) -> None:
    for key, value in pairs.items():
        if isinstance(value, float):
            value = f"{value:.6g}"
        print(f"{key}={value}", file=stream)


def load_system(cfg: RunConfig, out_dir: str) -> System:
    mask_params = nn.load_checkpoint(_out_path(out_dir, cfg["paths"]["mask_ckpt"]),
                                     {"kind": "masknet"})
    am_params = nn.load_checkpoint(_out_path(out_dir, cfg["paths"]["am_ckpt"]),
                                   {"kind": "am"}).freeze()
    b = cfg["beamform"]
    return System(maskestim.MaskNetConfig.from_meta(mask_params.meta), mask_params,
                  am.AmConfig.from_meta(am_params.meta), am_params,
                  stft_cfg=cfg.stft_config(), k_iters=b["k_iters"], loading=b["loading"],
                  variant=cfg.variant())


# --- subcommands -------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, out_dir: str, stream) -> int:
    s = cfg["scene"]
    seeds = scene_seeds(cfg["run"]["seed"], "simulate", s["n_scenes"])
    lines = ["# scene speaker seed snr_db measured_snr_db frames"]
    for i, seed in enumerate(seeds):
        speaker = s["speakers"][i % len(s["speakers"])]
        scene = sim.make_scene(cfg.scene_config(speaker, seed))
        name = f"scene{i:03d}"
        write_wav(os.path.join(out_dir, f"{name}.wav"), scene.waves["y"],
                  scene.meta.stft.sample_rate)
        linalg.write_matrices(os.path.join(out_dir, f"{name}.x.bin"), scene.x.data)
        linalg.write_matrices(os.path.join(out_dir, f"{name}.n.bin"), scene.n.data)
        linalg.write_matrices(os.path.join(out_dir, f"{name}.masks.bin"),
                              np.stack([scene.ideal_masks.speech, scene.ideal_masks.noise]))
        linalg.write_matrices(os.path.join(out_dir, f"{name}.classes.bin"),
                              scene.classes[None].astype(np.float64))
        lines.append(f"{name} {speaker} {seed} {s['snr_db']:.2f} "
                     f"{sim.measured_snr_db(scene):.4f} {scene.y.n_frames}")
    with open(os.path.join(out_dir, "manifest.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    _report({"scenes": len(seeds), "manifest": os.path.join(out_dir, "manifest.txt")}, stream)
    return EXIT_OK


def cmd_pretrain(cfg: RunConfig, out_dir: str, stream) -> int:
    m, a = cfg["masknet"], cfg["am"]
    speakers = cfg["scene"]["speakers"]
    mask_cfg = cfg.mask_config()
    mask_params, mask_losses = maskestim.pretrain_supervised(
        make_scenes(cfg, "mask", speakers, m["n_scenes"]), maskestim.init_params(mask_cfg),
        m["epochs"], m["lr"], mask_cfg)
    am_cfg = cfg.am_config()
    b = cfg["beamform"]
    system = System(mask_cfg, mask_params, am_cfg, None, stft_cfg=cfg.stft_config(),
                    k_iters=b["k_iters"], loading=b["loading"], variant=cfg.variant())
    am_losses = adapt.train_acoustic_model(system, make_scenes(cfg, "am", speakers, a["n_scenes"]),
                                           am_cfg, a["epochs"], a["lr"])
    nn.save_checkpoint(_out_path(out_dir, cfg["paths"]["mask_ckpt"]), mask_params)
    nn.save_checkpoint(_out_path(out_dir, cfg["paths"]["am_ckpt"]), system.am_params)
    print("stage    epoch  loss", file=stream)
    for e, loss in enumerate(mask_losses):
        print(f"masknet  {e:5d}  {loss:.6f}", file=stream)
    for e, loss in enumerate(am_losses):
        print(f"am       {e:5d}  {loss:.6f}", file=stream)
    _report({"mask_bce_initial": mask_losses[0], "mask_bce_final": mask_losses[-1],
             "am_ce_initial": am_losses[0], "am_ce_final": am_losses[-1],
             "mask_digest": mask_params.digest(), "am_digest": system.am_params.digest()},
            stream)
    return EXIT_OK


def cmd_beamform(cfg: RunConfig, out_dir: str, stream) -> int:
    path = cfg["paths"]["input"]
    if not path:
        raise InvalidConfigError("paths.input must name a WAV file")
    stft_cfg = cfg.stft_config()
    wave, rate = read_wav(path, stft_cfg.sample_rate)
    spec = stft(wave, stft_cfg)
    b = cfg["beamform"]
    if spec.n_channels == 1:
        if b["selector_channel"] != 0:
            raise InvalidConfigError("selector_channel out of range for a 1-channel input")
        w = sim.selector(spec.n_bins, 1, 0)
        masks = None
    else:
        system = load_system(cfg, out_dir)
        if system.mask_cfg.input_dim != spec.n_bins:
            raise InvalidConfigError("mask checkpoint does not match the STFT size")
        per_channel = maskestim.forward(np.abs(spec.data), system.mask_params, system.mask_cfg)
        masks = maskestim.MaskPair(maskestim.median_mask(per_channel.speech),
                                   maskestim.median_mask(per_channel.noise))
        weights = beamform.beamformer_weights(
            beamform.spatial_covariance(spec, masks.speech, "speech"),
            beamform.spatial_covariance(spec, masks.noise, "noise"),
            system.variant, b["k_iters"], b["loading"])
        w = weights.w
    enhanced = beamform.apply_beamformer(w, spec)
    out = istft(enhanced[None], stft_cfg)
    out_path = _out_path(out_dir, cfg["paths"]["output"])
    write_wav(out_path, out, rate)
    dump = cfg["paths"]["dump"]
    if dump:
        linalg.write_matrices(_out_path(out_dir, dump), w)
        if masks is not None:
            linalg.write_matrices(_out_path(out_dir, dump) + ".masks",
                                  np.stack([masks.speech, masks.noise]))
    _report({"channels": spec.n_channels, "frames": spec.n_frames, "output": out_path}, stream)
    return EXIT_OK


def cmd_adapt(cfg: RunConfig, out_dir: str, stream) -> int:
    a = cfg["adapt"]
    b = cfg["beamform"]
    system = load_system(cfg, out_dir)
    speaker = [a["speaker"]]
    utts = make_scenes(cfg, "adapt", speaker, a["n_utterances"])
    heldout = make_scenes(cfg, "heldout", speaker, a["n_heldout"])
    acfg = adapt.AdaptConfig(a["lr"], a["epochs"], b["k_iters"], b["loading"], a["target_mode"])
    targets = adapt.first_pass_targets(utts, system, acfg.target_mode)
    new_params, report = adapt.adapt_mask_estimator(utts, targets, acfg, system)
    kv = report.key_values()
    if heldout:
        pre = adapt.evaluate(system, heldout)
        post = adapt.evaluate(replace(system, mask_params=new_params), heldout)
        kv.update({"heldout_pre_loss": pre.ce_loss, "heldout_post_loss": post.ce_loss,
                   "heldout_pre_accuracy": pre.frame_accuracy,
                   "heldout_post_accuracy": post.frame_accuracy,
                   "heldout_pre_snr_db": pre.output_snr_db,
                   "heldout_post_snr_db": post.output_snr_db})
    out_ckpt = _out_path(out_dir, "mask_adapted.ckpt")
    nn.save_checkpoint(out_ckpt, new_params)
    print("epoch  loss", file=stream)
    for e, loss in enumerate(report.epoch_losses):
        print(f"{e:5d}  {loss:.6f}", file=stream)
    print(f"{'metric':<10} {'pre':>10} {'post':>10}", file=stream)
    print(f"{'ce':<10} {report.pre_loss:10.4f} {report.post_loss:10.4f}", file=stream)
    print(f"{'accuracy':<10} {report.pre_accuracy:10.4f} {report.post_accuracy:10.4f}",
          file=stream)
    print(f"{'snr_db':<10} {report.pre_snr_db:10.4f} {report.post_snr_db:10.4f}", file=stream)
    kv["adapted_ckpt"] = out_ckpt
    kv["am_digest"] = system.am_params.digest()
    _report(kv, stream)
    return EXIT_OK


def cmd_eval(cfg: RunConfig, out_dir: str, stream) -> int:
    e = cfg["eval"]
    system = load_system(cfg, out_dir)
    scenes = make_scenes(cfg, "eval", e["speakers"], e["n_scenes"])
    metrics = adapt.evaluate(system, scenes, ideal_masks=e["ideal_masks"])
    _report({"n_utterances": metrics.n_utterances, "frame_accuracy": metrics.frame_accuracy,
             "ce_loss": metrics.ce_loss, "snr_gain_db": metrics.snr_gain_db,
             "output_snr_db": metrics.output_snr_db}, stream)
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig, out_dir: str, stream) -> int:
    g = cfg["gradcheck"]
    ops = g["ops"] or None
    if ops:
        for op in ops:
            if op not in check.REGISTRY:
                raise NotFoundError(f"unknown gradcheck op {op!r}")
    reports = check.run_all(range(g["seeds"]), ops)
    for rep in reports:
        print(rep.line(), file=stream)
    failed = [r for r in reports if not r.passed]
    worst = max(r.max_rel_err for r in reports)
    _report({"checks": len(reports), "failed": len(failed), "max_rel_err": worst}, stream)
    return EXIT_GRADCHECK if failed else EXIT_OK


def cmd_dump(cfg: RunConfig, out_dir: str, stream, path: str | None = None) -> int:
    path = path or cfg["paths"]["dump"]
    if not path:
        raise InvalidConfigError("dump needs a file (positional argument or paths.dump)")
    mats = linalg.read_matrices(path)
    print("index  rows  cols  dtype       fro_norm", file=stream)
    for i, mat in enumerate(mats):
        kind = "complex128" if np.iscomplexobj(mat) else "float64"
        print(f"{i:5d} {mat.shape[0]:5d} {mat.shape[1]:5d}  {kind:<10} "
              f"{np.linalg.norm(mat):.6g}", file=stream)
    _report({"matrices": len(mats)}, stream)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "pretrain": cmd_pretrain, "beamform": cmd_beamform,
            "adapt": cmd_adapt, "eval": cmd_eval, "gradcheck": cmd_gradcheck, "dump": cmd_dump}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gevadapt",
                                     description="Differentiable mask-based GEV beamforming")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("target", nargs="?", help="file argument (dump only)")
    parser.add_argument("--config", help="INI run configuration")
    parser.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--seed", type=int, help="run seed (overrides run.seed)")
    return parser


def run(argv=None, stream=None) -> int:
    stream = stream or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PARSE if exc.code else EXIT_OK
    try:
        overrides = list(args.set)
        if args.seed is not None:
            overrides.append(f"run.seed={args.seed}")
        cfg = RunConfig.load(args.config, overrides)
        os.makedirs(args.out, exist_ok=True)
        if args.command == "dump":
            return cmd_dump(cfg, args.out, stream, args.target)
        if args.target is not None:
            raise InvalidConfigError(f"{args.command} takes no positional argument")
        return COMMANDS[args.command](cfg, args.out, stream)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InvalidConfigError, InvalidInputError, FormatError, NotFoundError,
            FileNotFoundError, NotImplementedError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except GevAdaptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
