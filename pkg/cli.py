# cli.py - command-line surface: datasets, twin, synthesis, evaluation, oracle, reports
import argparse
import copy
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from atoms import (
    DescriptorDomainError,
    ReflectionTableError,
    SyntheticAtom,
    SyntheticAtomParams,
    envelope_report,
    write_reflection_table,
)
from config import TWIN_CONFIG, ConfigError, setup_logging
from fields import EmsLayout, load_layout_json
from pipeline import (
    DesignConfig,
    build_twin,
    compile_luts,
    default_document,
    evaluate_layout,
    oracle_layouts,
    synthesize,
    training_samples,
    warm_start_vector,
)
from run_logger import RunLogger
from scenarios import PRESETS, preset
from surrogate import GammaTwin, cross_validate

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_FAILURE = 2

# bad invocations, documents and input files; every other error is a runtime failure
INPUT_ERRORS = (ConfigError, DescriptorDomainError, ReflectionTableError, json.JSONDecodeError)


class _ArgumentParser(argparse.ArgumentParser):
    # usage errors are validation errors (exit 1), not runtime failures
    def error(self, message):
        raise ConfigError(message)


def _dotted_keys(doc: Dict, prefix: str = "") -> List[str]:
    keys = []
    for key, value in doc.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            keys.extend(_dotted_keys(value, dotted + "."))
        else:
            keys.append(dotted)
    return keys


def _unknown_key(dotted: str, defaults: Dict) -> ConfigError:
    return ConfigError(
        f"unknown configuration key {dotted!r}; valid keys: {', '.join(_dotted_keys(defaults))}"
    )


def _deep_merge(base: Dict, update: Dict, defaults: Dict, prefix: str = "") -> None:
    """Merge `update` into `base`, rejecting keys absent from the defaults"""
    for key, value in update.items():
        dotted = f"{prefix}{key}"
        if key not in base:
            raise _unknown_key(dotted, defaults)
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{dotted} must be an object, got {value!r}")
            _deep_merge(base[key], value, defaults, dotted + ".")
        else:
            base[key] = value


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _apply_override(doc: Dict, assignment: str, defaults: Dict) -> None:
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} must look like key=value")
    dotted, text = assignment.split("=", 1)
    dotted = dotted.strip()
    node = doc
    parts = dotted.split(".")
    for part in parts[:-1]:
        if not isinstance(node.get(part), dict):
            raise _unknown_key(dotted, defaults)
        node = node[part]
    if parts[-1] not in node or isinstance(node[parts[-1]], dict):
        raise _unknown_key(dotted, defaults)
    node[parts[-1]] = _parse_value(text)


def load_document(path: Optional[str] = None, preset_name: Optional[str] = None) -> Dict:
    """Defaults, then an optional preset, then the JSON file"""
    defaults = default_document()
    doc = copy.deepcopy(defaults)
    if preset_name:
        _deep_merge(doc, preset(preset_name), defaults)
    if path:
        config_path = Path(path)
        if not config_path.is_file():
            raise ConfigError(f"config file not found: {config_path}")
        try:
            with open(config_path, "r", encoding="utf-8") as f:
                user = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{config_path}: invalid JSON: {e}") from e
        if not isinstance(user, dict):
            raise ConfigError(f"{config_path}: top level must be an object")
        _deep_merge(doc, user, defaults)
    return doc


def parse_config(
    path: Optional[str] = None,
    overrides: Sequence[str] = (),
    preset_name: Optional[str] = None,
    seed: Optional[int] = None,
    threads: Optional[int] = None,
    out: Optional[str] = None,
) -> DesignConfig:
    """Validated DesignConfig from file/preset, dotted overrides and flag overrides"""
    defaults = default_document()
    doc = load_document(path, preset_name)
    for assignment in overrides:
        _apply_override(doc, assignment, defaults)
    if seed is not None:
        doc["twin"]["seed"] = seed
        doc["pso"]["seed"] = seed + 1
    if threads is not None:
        doc["threads"] = threads
    if out is not None:
        doc["output_dir"] = out
    return DesignConfig.from_dict(doc)


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(
        prog="ems-synth", description="Multi-polarization static passive EMS synthesis"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str, needs_config: bool = True) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        if needs_config:
            source = p.add_mutually_exclusive_group(required=True)
            source.add_argument("--config", help="JSON design configuration")
            source.add_argument("--preset", choices=sorted(PRESETS), help="built-in scenario")
            p.add_argument("--set", dest="overrides", action="append", default=[],
                           metavar="KEY=VALUE", help="dotted-key override (repeatable)")
            p.add_argument("--seed", type=int, help="master seed (twin = seed, swarm = seed + 1)")
            p.add_argument("--threads", type=int, help="worker threads for cost evaluation")
            p.add_argument("--out", help="output directory")
        p.add_argument("--quiet", action="store_true", help="only warnings and errors on stderr")
        return p

    add("sample-atoms", "sample the meta-atom response and write the reflection table")
    add("train-twin", "train the Kriging twin and compile its lookup tables")
    validate = add("validate-twin", "k-fold cross validation of the twin")
    validate.add_argument("--folds", type=int, default=TWIN_CONFIG["cv_folds"])
    add("synthesize", "run the full synthesis loop")
    evaluate = add("evaluate", "evaluate a stored layout")
    evaluate.add_argument("--layout", required=True, help="layout JSON")
    evaluate.add_argument("--twin", help="trained twin JSON (otherwise retrained)")
    oracle = add("oracle", "single-polarization phase-conjugation designs")
    oracle.add_argument("--twin", help="trained twin JSON (otherwise retrained)")
    report = add("report", "summarize a synthesis result", needs_config=False)
    report.add_argument("--result", required=True, help="synthesis_result.json")
    return parser


def _twin(config: DesignConfig, twin_path: Optional[str]) -> GammaTwin:
    if twin_path:
        if not Path(twin_path).is_file():
            raise ConfigError(f"twin file not found: {twin_path}")
        return GammaTwin.load(twin_path)
    return build_twin(config)


def _emit(data: Dict) -> None:
    sys.stdout.write(json.dumps(data, indent=2) + "\n")


def _cmd_sample_atoms(config: DesignConfig, args, out: RunLogger) -> None:
    samples = training_samples(config)
    write_reflection_table(samples, out.artifact_path("reflection_table.csv"))
    summary = {"n_samples": len(samples), "source": config.twin_source}
    if config.twin_source == "synthetic":
        atom = SyntheticAtom(SyntheticAtomParams.for_cell(config.cell, config.bounds))
        summary["envelope"] = [envelope_report(atom, 64, theta) for theta in config.incidence_angles]
    out.write_json("atoms.json", summary)
    _emit(summary)


def _cmd_train_twin(config: DesignConfig, args, out: RunLogger) -> None:
    twin = build_twin(config)
    twin.save(out.artifact_path("twin.json"))
    by_angle = {lut.theta_inc: lut for lut in compile_luts(twin, config).values()}
    for lut in by_angle.values():
        lut.save(out.artifact_path(f"lut_theta_{lut.theta_inc:+g}.json"))
    _emit({"n_train": twin.n_train, "theta_range": list(twin.theta_range)})


def _cmd_validate_twin(config: DesignConfig, args, out: RunLogger) -> None:
    report = cross_validate(training_samples(config), folds=args.folds, seed=config.twin_seed)
    out.write_json("twin_validation.json", report)
    _emit(report)


def _cmd_synthesize(config: DesignConfig, args, out: RunLogger) -> None:
    result = synthesize(config, progress=out.progress_sink(), threads=config.threads)
    out.write_result(result)
    _emit(
        {
            "cost": result.cost,
            "iterations": result.optimization.iterations,
            "runtime_s": result.runtime_s,
            "report": result.report.to_dict(),
        }
    )


def _cmd_evaluate(config: DesignConfig, args, out: RunLogger) -> None:
    if not Path(args.layout).is_file():
        raise ConfigError(f"layout file not found: {args.layout}")
    layout = load_layout_json(args.layout)
    luts = compile_luts(_twin(config, args.twin), config)
    report = evaluate_layout(
        layout, config.targets, luts, config.cut_samples, config.grid_u, config.grid_v
    )
    out.write_layout_report(report)
    _emit(report.to_dict())


def _cmd_oracle(config: DesignConfig, args, out: RunLogger) -> None:
    luts = compile_luts(_twin(config, args.twin), config)
    oracles = oracle_layouts(config, luts)
    oracles_out = {}
    compromise = EmsLayout.from_vector(
        warm_start_vector(oracles), config.P, config.Q, config.cell, config.bounds
    )
    for name, layout in [(pol.value, oracles[pol]) for pol in config.targets.active()] + [
        ("compromise", compromise)
    ]:
        report = evaluate_layout(
            layout, config.targets, luts, config.cut_samples, config.grid_u, config.grid_v
        )
        out.write_layout(layout, f"oracle_{name}_layout")
        out.write_layout_report(report, prefix=f"oracle_{name}_")
        oracles_out[name] = report.to_dict()
    _emit(oracles_out)


def _cmd_report(args) -> None:
    path = Path(args.result)
    if not path.is_file():
        raise ConfigError(f"result file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        result = json.load(f)
    lines = [
        f"cost            {result['cost']:.6e}",
        f"iterations      {result['iterations']} ({result['evaluations']} evaluations)",
        f"runtime         {result['runtime_s']:.2f} s",
    ]
    for pol, rep in result["report"]["polarizations"].items():
        cut = rep["cut"]
        lines.append(
            f"{pol}: target u={rep['target_u']:+.4f}  peak u={cut['u_peak']:+.4f}  "
            f"|E|={rep['target_field_magnitude']:.4e}  SLL={cut['sidelobe_level_db']:.2f} dB"
        )
    sys.stdout.write("\n".join(lines) + "\n")


HANDLERS = {
    "sample-atoms": _cmd_sample_atoms,
    "train-twin": _cmd_train_twin,
    "validate-twin": _cmd_validate_twin,
    "synthesize": _cmd_synthesize,
    "evaluate": _cmd_evaluate,
    "oracle": _cmd_oracle,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Execute one subcommand; 0 ok, 1 invalid input, 2 runtime failure"""
    quiet = "--quiet" in (argv if argv is not None else sys.argv[1:])
    setup_logging(quiet=quiet)
    try:
        args = build_parser().parse_args(argv)
        if args.command == "report":
            _cmd_report(args)
            return EXIT_OK

        config = parse_config(
            args.config, args.overrides, args.preset, args.seed, args.threads, args.out
        )
        setup_logging(config.output_dir, quiet=args.quiet)
        logger.info(f"{args.command}: output directory {config.output_dir}")
        with RunLogger(config.output_dir, args.command) as out:
            out.write_json("config_echo.json", config.to_dict())
            HANDLERS[args.command](config, args, out)
        return EXIT_OK
    except SystemExit as e:
        return int(e.code or 0)
    except INPUT_ERRORS as e:
        logger.error(f"{e}")
        return EXIT_INVALID
    except Exception as e:
        logger.exception(f"Run failed: {e}")
        return EXIT_FAILURE
