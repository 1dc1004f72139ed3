"""Command-line entry points: run, apply, eval, pairs, serve."""
from __future__ import annotations

import argparse
import json
import os
import sys

from .agents import API_KEY_ENV, CHAT_ENDPOINT_ENV, AgentBackendConfig, ChatAgents, RuleAgents
from .errors import (
    BackendError,
    DecodeError,
    InsufficientDatasetError,
    ProgramParseError,
    RetouchError,
    ShapeMismatchError,
    TooSmallError,
)
from .image import load_image, save_image
from .filters import execute_program
from .metrics import build_reference_pairs, delta_e, psnr, ssim
from .programs import load_program, serialize_program
from .scoring import GLOBAL_PROMPTS, EmbeddingProvider, StatsProvider
from .session import SCORE_KINDS, SessionConfig, export_session, run_session

EMBED_ENDPOINT_ENV = "RETOUCH_EMBED_ENDPOINT"

EXIT_OK = 0
EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_BACKEND = 3


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _score_arg_to_kind(value: str) -> str:
    return value.replace("-", "_")


def _make_provider(args) -> object:
    endpoint = args.embed_endpoint or os.environ.get(EMBED_ENDPOINT_ENV, "")
    if endpoint:
        return EmbeddingProvider(endpoint)
    return StatsProvider()


def _make_agents(args):
    if args.agent == "rule":
        return RuleAgents()
    endpoint = args.chat_endpoint or os.environ.get(CHAT_ENDPOINT_ENV, "")
    if not endpoint:
        raise ValueError(
            f"--agent chat needs a chat endpoint (--chat-endpoint or ${CHAT_ENDPOINT_ENV})"
        )
    if not os.environ.get(API_KEY_ENV, ""):
        raise ValueError(f"--agent chat needs the {API_KEY_ENV} environment variable")
    return ChatAgents(AgentBackendConfig(endpoint=endpoint, model=args.model))


def cmd_run(args) -> int:
    try:
        agents = _make_agents(args)
        config = SessionConfig(
            max_iters=args.iters,
            n_candidates=args.candidates,
            n_refs=len(args.ref),
            score=_score_arg_to_kind(args.score),
            agent=args.agent,
            warm_start=not args.no_warm_start,
            seed=args.seed,
        )
    except ValueError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    try:
        source = load_image(args.source)
        refs = [load_image(p) for p in args.ref]
    except (OSError, DecodeError) as exc:
        return _fail(EXIT_CONFIG, f"cannot read inputs: {exc}")

    provider = _make_provider(args)
    try:
        final, state, program = run_session(source, refs, config, agents, provider)
    except BackendError as exc:
        return _fail(EXIT_BACKEND, str(exc))

    try:
        if args.out:
            save_image(final, args.out, depth=final.source_depth)
        if args.program_out:
            with open(args.program_out, "w", encoding="utf-8") as fh:
                fh.write(serialize_program(program))
        if args.session_out:
            export_session(state, args.session_out)
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot write outputs: {exc}")
    print(
        json.dumps(
            {
                "status": state.status.value,
                "iterations": len(state.history),
                "steps": len(program),
            }
        )
    )
    return EXIT_OK


def cmd_apply(args) -> int:
    try:
        with open(args.program, "r", encoding="utf-8") as fh:
            program = load_program(fh.read())
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot read program: {exc}")
    except ProgramParseError as exc:
        return _fail(EXIT_CONFIG, f"malformed program: {exc}")
    try:
        image = load_image(args.input)
        result = execute_program(image, program)
        save_image(result, args.output, depth=image.source_depth)
    except (OSError, DecodeError) as exc:
        return _fail(EXIT_IO, str(exc))
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        pred = load_image(args.pred)
        gt = load_image(args.gt)
        report = {"psnr": psnr(pred, gt), "ssim": ssim(pred, gt), "delta_e": delta_e(pred, gt)}
    except (OSError, DecodeError, ShapeMismatchError, TooSmallError) as exc:
        return _fail(EXIT_IO, str(exc))
    print(json.dumps(report))
    return EXIT_OK


def cmd_pairs(args) -> int:
    try:
        names = sorted(
            n for n in os.listdir(args.dir)
            if n.lower().endswith((".png", ".jpg", ".jpeg"))
        )
        images = [load_image(os.path.join(args.dir, n)) for n in names]
    except (OSError, DecodeError) as exc:
        return _fail(EXIT_IO, str(exc))
    provider = _make_provider(args)
    try:
        pairs = build_reference_pairs(images, provider, GLOBAL_PROMPTS, args.m)
    except InsufficientDatasetError as exc:
        return _fail(EXIT_IO, str(exc))
    except BackendError as exc:
        return _fail(EXIT_BACKEND, str(exc))
    doc = {name: [names[j] for j in refs] for name, refs in zip(names, pairs)}
    payload = json.dumps(doc, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(payload)
    else:
        print(payload)
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    chat_endpoint = args.chat_endpoint or os.environ.get(CHAT_ENDPOINT_ENV, "")
    app = create_app(
        persist_dir=args.persist,
        chat_endpoint=chat_endpoint,
        chat_model=args.model,
        embed_endpoint=args.embed_endpoint or os.environ.get(EMBED_ENDPOINT_ENV, ""),
        ui_dir=args.ui,
    )
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="retouchkit", description="White-box iterative image retouching"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="retouch a source image toward reference images")
    run.add_argument("--source", required=True)
    run.add_argument("--ref", action="append", required=True, help="reference image (repeatable)")
    run.add_argument("--iters", type=int, default=10)
    run.add_argument("--candidates", type=int, default=3)
    run.add_argument(
        "--score",
        default="clip-kl-global",
        choices=[k.replace("_", "-") for k in SCORE_KINDS],
    )
    run.add_argument("--agent", default="rule", choices=["rule", "chat"])
    run.add_argument("--embed-endpoint", default="")
    run.add_argument("--chat-endpoint", default="")
    run.add_argument("--model", default="gpt-4o")
    run.add_argument("--out", default="")
    run.add_argument("--program-out", default="")
    run.add_argument("--session-out", default="")
    run.add_argument("--no-warm-start", action="store_true")
    run.add_argument("--seed", type=int, default=None)
    run.set_defaults(func=cmd_run)

    apply_p = sub.add_parser("apply", help="apply a saved program to an image")
    apply_p.add_argument("--program", required=True)
    apply_p.add_argument("--input", required=True)
    apply_p.add_argument("--output", required=True)
    apply_p.set_defaults(func=cmd_apply)

    eval_p = sub.add_parser("eval", help="PSNR/SSIM/deltaE between two images")
    eval_p.add_argument("--pred", required=True)
    eval_p.add_argument("--gt", required=True)
    eval_p.set_defaults(func=cmd_eval)

    pairs_p = sub.add_parser("pairs", help="style-nearest reference pairing over a directory")
    pairs_p.add_argument("--dir", required=True)
    pairs_p.add_argument("--m", type=int, default=5)
    pairs_p.add_argument("--out", default="")
    pairs_p.add_argument("--embed-endpoint", default="")
    pairs_p.set_defaults(func=cmd_pairs)

    serve = sub.add_parser("serve", help="run the HTTP session service")
    serve.add_argument("--port", type=int, default=8000)
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--persist", default="")
    serve.add_argument("--chat-endpoint", default="")
    serve.add_argument("--embed-endpoint", default="")
    serve.add_argument("--model", default="gpt-4o")
    serve.add_argument("--ui", default="", help="directory of static frontend files to serve")
    serve.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except RetouchError as exc:
        return _fail(EXIT_IO, str(exc))


if __name__ == "__main__":
    sys.exit(main())
