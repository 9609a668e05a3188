"""Offline improvement loop: failure-case corpus, k-fold cross-validation,
prompt optimization (rubric rewrite), few-shot exemplars, and per-method
accuracy reports.

The corpus is newline-delimited JSON in the event-export envelope with an
added ``expected_label`` field, so failures captured online convert to
corpus entries mechanically. Everything built for fold k uses only the
other folds: leakage is impossible by construction and tested as the
blind-fold property.
"""

from __future__ import annotations

import json
import logging
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import GatewayError, ParseError, TooFewCases
from .gateway import ROLE_FILTER, ROLE_JUDGE, ROLE_RESPONDER, ROLE_RUBRIC_OPT, LlmGateway, LlmRequest
from .pipeline import ANSWER_ATTEMPT, parse_intent_token, parse_judge_output
from .prompting import PromptLibrary, render

logger = logging.getLogger(__name__)

COMPONENT_FILTER = "Filter"
COMPONENT_JUDGER = "Judger"
COMPONENT_RESPONDER = "Responder"
COMPONENTS = (COMPONENT_FILTER, COMPONENT_JUDGER, COMPONENT_RESPONDER)

METHOD_BASELINE = "Baseline"
METHOD_RUBRIC_OPT = "RubricOpt"
METHOD_FEW_SHOT = "FewShot"
METHOD_BOTH = "Both"
METHODS = (METHOD_BASELINE, METHOD_RUBRIC_OPT, METHOD_FEW_SHOT, METHOD_BOTH)

_ROLE_FOR_COMPONENT = {
    COMPONENT_FILTER: ROLE_FILTER,
    COMPONENT_JUDGER: ROLE_JUDGE,
    COMPONENT_RESPONDER: ROLE_RESPONDER,
}

_REVISED = re.compile(r"REVISED\s*:\s*", re.IGNORECASE)


@dataclass
class FailureCase:
    case_id: str
    component: str
    question: str
    expectations: list[dict]  # {id, statement, rubric}
    transcript: list[dict]  # {speaker, text}
    user_message: str
    expected_label: object  # str for Filter/Responder, list[str] for Judger
    collected_from: Optional[int] = None


@dataclass
class FoldPlan:
    k: int
    seed: int
    folds: list[list[str]]


@dataclass
class MethodReport:
    method: str
    per_fold_accuracy: list[float]
    mean_accuracy: float
    k: int = 0
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "per_fold_accuracy": self.per_fold_accuracy,
            "mean_accuracy": self.mean_accuracy,
            "k": self.k,
            "seed": self.seed,
        }


# --- corpus IO ---------------------------------------------------------------

def case_to_line(case: FailureCase) -> str:
    doc = {
        "event_id": case.collected_from,
        "ts": "1970-01-01T00:00:00.000Z",
        "user_id": "corpus",
        "session_id": None,
        "kind": "UserMessage",
        "component": case.component,
        "payload": {
            "case_id": case.case_id,
            "question": case.question,
            "expectations": case.expectations,
            "transcript": case.transcript,
            "user_message": case.user_message,
        },
        "expected_label": case.expected_label,
    }
    return json.dumps(doc, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def case_from_line(line: str, lineno: int = 0) -> FailureCase:
    doc = json.loads(line)
    component = doc.get("component")
    if component not in COMPONENTS:
        raise ParseError(f"corpus line {lineno}: component must be one of {COMPONENTS}, got {component!r}")
    payload = doc.get("payload") or {}
    expected = doc.get("expected_label")
    if component == COMPONENT_JUDGER:
        if not isinstance(expected, list):
            raise ParseError(f"corpus line {lineno}: Judger expected_label must be a list of expectation ids")
    elif not isinstance(expected, str):
        raise ParseError(f"corpus line {lineno}: {component} expected_label must be a string")
    case_id = payload.get("case_id") or (
        f"case-{doc['event_id']}" if doc.get("event_id") is not None else f"case-line-{lineno}"
    )
    return FailureCase(
        case_id=case_id,
        component=component,
        question=payload.get("question", ""),
        expectations=payload.get("expectations", []),
        transcript=payload.get("transcript", []),
        user_message=payload.get("user_message", ""),
        expected_label=expected,
        collected_from=doc.get("event_id"),
    )


def load_corpus(path: str | Path) -> list[FailureCase]:
    cases = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if line.strip():
            cases.append(case_from_line(line, lineno))
    ids = [c.case_id for c in cases]
    if len(set(ids)) != len(ids):
        raise ParseError("corpus contains duplicate case ids")
    return cases


def save_corpus(cases: list[FailureCase], path: str | Path) -> None:
    Path(path).write_text("".join(case_to_line(c) + "\n" for c in cases), encoding="utf-8")


# --- fold planning ------------------------------------------------------------

def kfold_split(case_ids: list[str], k: int, seed: int) -> FoldPlan:
    """Shuffle with the seed, then deal round-robin; fold sizes differ by <= 1."""
    if len(case_ids) < k:
        raise TooFewCases(f"need at least {k} cases, got {len(case_ids)}")
    if k < 2:
        raise ValueError("k must be >= 2")
    shuffled = list(case_ids)
    random.Random(seed).shuffle(shuffled)
    folds: list[list[str]] = [[] for _ in range(k)]
    for index, case_id in enumerate(shuffled):
        folds[index % k].append(case_id)
    return FoldPlan(k=k, seed=seed, folds=folds)


# --- few-shot selection ---------------------------------------------------------

def _tokens(text: str) -> list[str]:
    return re.findall(r"[a-z0-9]+", text.lower())


def token_overlap(a: str, b: str) -> float:
    """Jaccard similarity over lowercased word sets."""
    sa, sb = set(_tokens(a)), set(_tokens(b))
    if not sa and not sb:
        return 0.0
    return len(sa & sb) / len(sa | sb)


def select_few_shot(train_cases: list[FailureCase], target_case: FailureCase, m: int) -> list[FailureCase]:
    """Pick m exemplars: same component first, then message similarity,
    ties broken by ascending case_id. Train cases only; the caller never
    passes anything from the target's fold."""
    ranked = sorted(
        train_cases,
        key=lambda c: (
            0 if c.component == target_case.component else 1,
            -token_overlap(c.user_message, target_case.user_message),
            c.case_id,
        ),
    )
    return ranked[: max(0, m)]


def exemplar_block(exemplars: list[FailureCase]) -> str:
    if not exemplars:
        return ""
    lines = ["Worked examples of correct behavior:"]
    for case in exemplars:
        expected = case.expected_label
        if isinstance(expected, list):
            expected = ", ".join(expected) if expected else "none"
        lines.append(f"- Message: {case.user_message}\n  Correct output: {expected}")
    return "\n".join(lines) + "\n\n"


# --- rubric optimization ---------------------------------------------------------

def failure_digest(train_cases: list[FailureCase], limit: int = 12) -> str:
    counts = Counter(c.component for c in train_cases)
    lines = ["Failure counts: " + ", ".join(f"{comp}={n}" for comp, n in sorted(counts.items()))]
    for case in train_cases[:limit]:
        expected = case.expected_label
        if isinstance(expected, list):
            expected = ", ".join(expected) if expected else "none"
        lines.append(f"- [{case.component}] message {case.user_message!r} should yield: {expected}")
    return "\n".join(lines)


def rubric_opt(base_prompt: str, train_cases: list[FailureCase], gateway: LlmGateway,
               prompts: Optional[PromptLibrary] = None) -> str:
    """One optimizer call; the base prompt survives any gateway trouble."""
    if not train_cases:
        raise ValueError("rubric_opt needs a non-empty training set")
    prompts = prompts or PromptLibrary.load()
    digest = failure_digest(train_cases)
    request = LlmRequest(
        role_tag=ROLE_RUBRIC_OPT,
        system_prompt=render(prompts.get(ROLE_RUBRIC_OPT), base_prompt=base_prompt, digest=digest),
        transcript=[{"speaker": "user", "text": digest}],
        temperature=0.0,
    )
    try:
        response = gateway.complete(request)
    except GatewayError as exc:
        logger.warning("rubric_opt gateway failure, keeping base prompt: %s", exc)
        return base_prompt
    match = _REVISED.search(response.text)
    revised = response.text[match.end():].strip() if match else response.text.strip()
    return revised or base_prompt


# --- evaluation -------------------------------------------------------------------

@dataclass
class EvalConfig:
    few_shot_m: int = 4
    responder_f1_threshold: float = 0.6


def token_f1(prediction: str, reference: str) -> float:
    """Token-level F1 with multiset overlap, the usual short-answer metric."""
    pred, ref = _tokens(prediction), _tokens(reference)
    if not pred or not ref:
        return 1.0 if pred == ref else 0.0
    overlap = sum((Counter(pred) & Counter(ref)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred)
    recall = overlap / len(ref)
    return 2 * precision * recall / (precision + recall)


def _case_request(case: FailureCase, system_prompt: str) -> LlmRequest:
    transcript = list(case.transcript) + [{"speaker": "user", "text": case.user_message}]
    return LlmRequest(
        role_tag=_ROLE_FOR_COMPONENT[case.component],
        system_prompt=system_prompt,
        transcript=transcript,
        temperature=0.0,
    )


def _render_component_prompt(case: FailureCase, base_template: str) -> str:
    expectations = "\n".join(
        f"- {e.get('id')}: {e.get('statement', '')}\n  rubric: {e.get('rubric', '')}" for e in case.expectations
    ) or "(none)"
    return render(base_template, question=case.question, expectations=expectations,
                  exemplars="(none)", met="(none yet)", situation="evaluation replay", hints="(none)")


def run_case(case: FailureCase, system_prompt: str, gateway: LlmGateway, cfg: EvalConfig) -> bool:
    """Execute one held-out case and score it against its expected label."""
    request = _case_request(case, system_prompt)
    response = gateway.complete(request)
    if case.component == COMPONENT_FILTER:
        predicted = parse_intent_token(response.text) or ANSWER_ATTEMPT
        return predicted == case.expected_label
    if case.component == COMPONENT_JUDGER:
        candidates = {e.get("id") for e in case.expectations}
        verdict = parse_judge_output(response.text, candidates)
        if verdict is None:
            repair = _case_request(case, system_prompt + "\n\nEnd with the required 'COVERED: ...' line.")
            verdict = parse_judge_output(gateway.complete(repair).text, candidates)
        covered = verdict.covered if verdict is not None else set()
        return covered == set(case.expected_label)
    return token_f1(response.text, str(case.expected_label)) >= cfg.responder_f1_threshold


def build_fold_prompts(
    fold_index: int,
    plan: FoldPlan,
    cases_by_id: dict[str, FailureCase],
    method: str,
    gateway: LlmGateway,
    prompts: PromptLibrary,
) -> dict[str, str]:
    """Component prompt templates for evaluating fold ``fold_index``.

    Built strictly from the other folds' cases, so the result is identical
    whether or not the held-out fold's cases exist at all (blind-fold
    property)."""
    train = [
        cases_by_id[cid]
        for i, fold in enumerate(plan.folds)
        if i != fold_index
        for cid in fold
        if cid in cases_by_id
    ]
    templates = {}
    for component in COMPONENTS:
        base = prompts.get(_ROLE_FOR_COMPONENT[component])
        if method in (METHOD_RUBRIC_OPT, METHOD_BOTH):
            component_train = [c for c in train if c.component == component]
            if component_train:
                base = rubric_opt(base, component_train, gateway, prompts)
        templates[component] = base
    return templates


def evaluate(
    plan: FoldPlan,
    corpus: list[FailureCase],
    method: str,
    gateway: LlmGateway,
    prompts: Optional[PromptLibrary] = None,
    cfg: Optional[EvalConfig] = None,
) -> MethodReport:
    """Cross-validated accuracy of one improvement method.

    Per fold: refit prompts/exemplars on the other folds, run every held-out
    case through its component, score, and average. A GatewayError aborts
    the run with the failing fold named; reruns are cheap and deterministic
    under a scripted gateway.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    prompts = prompts or PromptLibrary.load()
    cfg = cfg or EvalConfig()
    cases_by_id = {c.case_id: c for c in corpus}
    planned = {cid for fold in plan.folds for cid in fold}
    missing = set(cases_by_id) - planned
    if missing:
        raise ValueError(f"fold plan does not cover cases: {sorted(missing)[:5]}")

    per_fold = []
    for fold_index, fold in enumerate(plan.folds):
        fold_cases = [cases_by_id[cid] for cid in fold if cid in cases_by_id]
        if not fold_cases:
            per_fold.append(0.0)
            continue
        templates = build_fold_prompts(fold_index, plan, cases_by_id, method, gateway, prompts)
        train = [
            cases_by_id[cid]
            for i, other in enumerate(plan.folds)
            if i != fold_index
            for cid in other
            if cid in cases_by_id
        ]
        correct = 0
        for case in fold_cases:
            system_prompt = _render_component_prompt(case, templates[case.component])
            if method in (METHOD_FEW_SHOT, METHOD_BOTH):
                exemplars = select_few_shot(train, case, cfg.few_shot_m)
                system_prompt = exemplar_block(exemplars) + system_prompt
            try:
                if run_case(case, system_prompt, gateway, cfg):
                    correct += 1
            except GatewayError as exc:
                raise GatewayError(f"fold {fold_index} failed on case {case.case_id}: {exc}") from exc
        per_fold.append(100.0 * correct / len(fold_cases))

    mean = sum(per_fold) / len(per_fold) if per_fold else 0.0
    return MethodReport(method=method, per_fold_accuracy=per_fold, mean_accuracy=mean, k=plan.k, seed=plan.seed)
