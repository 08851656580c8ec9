"""Repository scanning: extract C/C++ functions, analyze, emit reports.

Function extraction is lexical: a definition is a top-level
``identifier ( ... ) {`` with braces balanced to the matching close.
Matching runs over lexer tokens, so braces inside string or character
literals cannot confuse it. K&R-style definitions and macro-generated
functions are known misses of this approach.

Every analyzed function yields a report with the four developer-facing
outputs: the predicted class, its static description, the vulnerable
line range, and the root-cause line, all in file coordinates.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .attribution import (AttributionError, attribute_tokens, normalize_scores,
                          select_root_cause)
from .corpus import (BINARY_VULNERABLE_LABEL, CweCatalog, FunctionRecord,
                     default_catalog)
from .errors import DataError, LexError
from .lexer import Token, TokenKind, Vocabulary, lex, tokenize
from .model import VulnModel, denormalize_lines
from .semgraph import build_graph
from .trainer import prepare_sample

logger = logging.getLogger(__name__)

SOURCE_EXTENSIONS = {".c", ".h", ".cc", ".cpp", ".hpp"}
_CPP_EXTENSIONS = {".cc", ".cpp", ".hpp"}

_BINARY_DESCRIPTION = (
    "Vulnerability detected. This model distinguishes vulnerable from "
    "benign code only; no weakness class is available."
)


@dataclass
class AnalysisReport:
    """Developer-facing result for one function."""

    function_id: str
    file: str | None
    span: tuple[int, int]  # file coordinates, inclusive
    predicted_cwe: str  # "none" when benign, else a CWE id or "VULN"
    confidence: float
    description: str
    vul_lines: tuple[int, int] | None = None
    root_cause_line: int | None = None
    line_attributions: dict[int, float] | None = None
    truncated: bool = False
    warnings: list[str] = field(default_factory=list)
    error: str | None = None

    @property
    def unanalyzable(self) -> bool:
        return self.error is not None

    def to_json_dict(self) -> dict:
        return {
            "function_id": self.function_id,
            "file": self.file,
            "span": list(self.span),
            "predicted_cwe": self.predicted_cwe,
            "confidence": self.confidence,
            "description": self.description,
            "vul_lines": None if self.vul_lines is None else list(self.vul_lines),
            "root_cause_line": self.root_cause_line,
            "line_attributions": None if self.line_attributions is None else {
                str(line): score
                for line, score in sorted(self.line_attributions.items())},
            "truncated": self.truncated,
            "warnings": self.warnings,
            "error": self.error,
        }


def extract_functions(root: str | Path) -> list[FunctionRecord]:
    """Walk a source tree and cut out every function definition.

    Records are ordered by (relative path, start line). A file whose
    braces cannot be balanced is skipped with a warning rather than
    failing the walk.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"scan root {root} is not a readable directory")
    records: list[FunctionRecord] = []
    files = sorted(p for p in root.rglob("*")
                   if p.is_file() and p.suffix in SOURCE_EXTENSIONS)
    for path in files:
        rel = path.relative_to(root).as_posix()
        try:
            text = path.read_text(encoding="utf-8", errors="replace")
        except OSError as exc:
            logger.warning("skipping unreadable file %s: %s", rel, exc)
            continue
        text = text.replace("\r\n", "\n").replace("\r", "\n")
        try:
            records.extend(_functions_in_file(text, rel))
        except LexError as exc:
            logger.warning("skipping unlexable file %s: %s", rel, exc)
    return records


def _functions_in_file(text: str, rel_path: str) -> list[FunctionRecord]:
    tokens = lex(text)
    lines = text.split("\n")
    language = "cpp" if Path(rel_path).suffix in _CPP_EXTENSIONS else "c"
    directive_lines = _directive_lines(tokens)
    records: list[FunctionRecord] = []
    depth = 0
    i = 0
    n = len(tokens)
    while i < n:
        tok = tokens[i]
        if depth == 0 and tok.kind is TokenKind.IDENTIFIER \
                and tok.line not in directive_lines \
                and i + 1 < n and tokens[i + 1].text == "(":
            close = _match_tokens(tokens, i + 1, "(", ")")
            if close is not None and close + 1 < n \
                    and tokens[close + 1].text == "{":
                end = _match_tokens(tokens, close + 1, "{", "}")
                if end is None:
                    logger.warning(
                        "skipping %s: unbalanced braces after line %d",
                        rel_path, tokens[close + 1].line)
                    return []
                start_line = _declaration_start(tokens, i, directive_lines)
                end_line = tokens[end].line
                source = "\n".join(lines[start_line - 1:end_line])
                records.append(FunctionRecord(
                    id=f"{rel_path}:{start_line}:{tok.text}",
                    source=source,
                    language=language,
                    file=rel_path,
                    file_start_line=start_line,
                ))
                i = end + 1
                continue
        if tok.text == "{":
            depth += 1
        elif tok.text == "}":
            depth = max(0, depth - 1)
        i += 1
    return records


def _directive_lines(tokens: Sequence[Token]) -> set[int]:
    """Lines whose first token is '#', i.e. preprocessor directives."""
    first_on_line: dict[int, str] = {}
    for tok in tokens:
        first_on_line.setdefault(tok.line, tok.text)
    return {line for line, text in first_on_line.items() if text == "#"}


def _match_tokens(tokens: Sequence[Token], open_pos: int, open_text: str,
                  close_text: str) -> int | None:
    depth = 0
    for i in range(open_pos, len(tokens)):
        if tokens[i].text == open_text:
            depth += 1
        elif tokens[i].text == close_text:
            depth -= 1
            if depth == 0:
                return i
    return None


def _declaration_start(tokens: Sequence[Token], name_pos: int,
                       directive_lines: set[int]) -> int:
    """First line of the declaration: scan back over return-type tokens."""
    start = name_pos
    while start - 1 >= 0:
        prev = tokens[start - 1]
        if prev.line in directive_lines:
            break
        if prev.kind in (TokenKind.KEYWORD, TokenKind.IDENTIFIER) \
                or prev.text in ("*", "&"):
            start -= 1
        else:
            break
    return tokens[start].line


def analyze(record: FunctionRecord, model: VulnModel, vocab: Vocabulary,
            catalog: CweCatalog | None = None) -> AnalysisReport:
    """Run the full pipeline on one function.

    Lexing failures produce a report marked unanalyzable instead of
    raising, so a single pathological function cannot stop a scan.
    """
    catalog = catalog or default_catalog()
    offset = (record.file_start_line - 1) if record.file_start_line else 0
    span = (offset + 1, offset + record.line_count)
    try:
        stream = tokenize(record.source)
        graph = build_graph(stream)
    except (LexError, DataError) as exc:
        return AnalysisReport(
            function_id=record.id, file=record.file, span=span,
            predicted_cwe="none", confidence=0.0,
            description="unanalyzable", error=str(exc))

    sample = prepare_sample(
        FunctionRecord(id=record.id, source=record.source,
                       language=record.language),
        vocab, model.config.num_classes, catalog)
    output = model.forward(sample.ids, sample.adjacency, sample.mask)
    probabilities = output.probabilities
    predicted = output.predicted_class
    report = AnalysisReport(
        function_id=record.id, file=record.file, span=span,
        predicted_cwe="none", confidence=float(probabilities[predicted]),
        description="No vulnerability detected.", truncated=stream.truncated)
    if stream.truncated:
        report.warnings.append(
            "function exceeded the 512-token window; lines beyond it "
            "cannot be localized")
    if predicted == 0:
        return report

    if model.config.num_classes == 2:
        report.predicted_cwe = BINARY_VULNERABLE_LABEL
        report.description = _BINARY_DESCRIPTION
    else:
        report.predicted_cwe = catalog.cwe_for_index(predicted)
        report.description = catalog.describe(report.predicted_cwe)

    local_start, local_end = denormalize_lines(output.loc_pred,
                                               record.line_count)
    report.vul_lines = (offset + local_start, offset + local_end)
    attribution = attribute_tokens(model, stream, graph, vocab)
    normalized = normalize_scores(attribution.line_scores)
    report.line_attributions = {offset + line: score
                                for line, score in normalized.items()}
    try:
        root = select_root_cause(attribution.line_scores, local_start,
                                 record.line_count)
        report.root_cause_line = offset + root.line
        if root.fallback_used:
            report.warnings.append(
                "no positively-scored line before the predicted range; "
                "root cause fell back to the best line overall")
    except AttributionError as exc:
        report.warnings.append(f"root cause unavailable: {exc}")
    return report


@dataclass
class ScanSummary:
    n_files: int
    n_functions: int
    counts: dict[str, int]
    skipped: list[str] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "n_files": self.n_files,
            "n_functions": self.n_functions,
            "counts": dict(sorted(self.counts.items())),
            "skipped": self.skipped,
        }

    def to_table(self) -> str:
        lines = [f"{'Predicted':<12} {'Count':>6}", "-" * 19]
        for cwe, count in sorted(self.counts.items()):
            lines.append(f"{cwe:<12} {count:>6}")
        lines.append("-" * 19)
        lines.append(f"{'total':<12} {self.n_functions:>6}")
        return "\n".join(lines) + "\n"


def _report_filename(report: AnalysisReport, suffix: str) -> str:
    base = (report.file or report.function_id).replace("/", "__")
    return f"{base}__L{report.span[0]}{suffix}"


def scan(root: str | Path, model: VulnModel, vocab: Vocabulary,
         out: str | Path, fmt: str = "json", jobs: int = 1,
         catalog: CweCatalog | None = None) -> ScanSummary:
    """Analyze every function under ``root`` and write one report each.

    Reports land in ``out`` ordered by (path, start line), together with
    summary.json counting functions per predicted class. Output is
    deterministic: rerunning on an unchanged tree with the same frozen
    model reproduces byte-identical files regardless of ``jobs``.
    """
    if fmt not in ("json", "text"):
        raise DataError(f"unknown report format {fmt!r}")
    catalog = catalog or default_catalog()
    records = extract_functions(root)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)

    def run(record: FunctionRecord) -> AnalysisReport:
        try:
            return analyze(record, model, vocab, catalog)
        except Exception as exc:  # crash isolation: report, keep scanning
            offset = (record.file_start_line or 1) - 1
            return AnalysisReport(
                function_id=record.id, file=record.file,
                span=(offset + 1, offset + record.line_count),
                predicted_cwe="none", confidence=0.0,
                description="unanalyzable", error=f"{type(exc).__name__}: {exc}")

    if jobs > 1 and len(records) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(run, records))
    else:
        reports = [run(record) for record in records]

    counts: dict[str, int] = {}
    for report in reports:
        counts[report.predicted_cwe] = counts.get(report.predicted_cwe, 0) + 1
        if fmt == "json":
            payload = json.dumps(report.to_json_dict(), indent=2,
                                 sort_keys=True)
            (out / _report_filename(report, ".json")).write_text(
                payload + "\n", encoding="utf-8")
        else:
            (out / _report_filename(report, ".txt")).write_text(
                render_report(report, _source_for(report, root)),
                encoding="utf-8")

    summary = ScanSummary(
        n_files=len({r.file for r in records if r.file}),
        n_functions=len(records),
        counts=counts,
    )
    (out / "summary.json").write_text(
        json.dumps(summary.to_json_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    (out / "summary.txt").write_text(summary.to_table(), encoding="utf-8")
    return summary


def _source_for(report: AnalysisReport, root: str | Path) -> str | None:
    if report.file is None:
        return None
    path = Path(root) / report.file
    try:
        text = path.read_text(encoding="utf-8", errors="replace")
    except OSError:
        return None
    lines = text.replace("\r\n", "\n").split("\n")
    return "\n".join(lines[report.span[0] - 1:report.span[1]])


def render_report(report: AnalysisReport, source: str | None = None) -> str:
    """Human-readable report: four labeled blocks plus a marked excerpt."""
    lines = [
        f"Function:        {report.function_id}",
        f"Classification:  {report.predicted_cwe}"
        f" (confidence {report.confidence:.2f})",
    ]
    if report.vul_lines is not None:
        lines.append(f"Vulnerable Line(s): {report.vul_lines[0]}"
                     f"-{report.vul_lines[1]}")
    else:
        lines.append("Vulnerable Line(s): none")
    lines.append(f"Description:     {report.description}")
    if report.root_cause_line is not None:
        lines.append(f"Root Cause:      line {report.root_cause_line}")
    else:
        lines.append("Root Cause:      none")
    for warning in report.warnings:
        lines.append(f"Warning:         {warning}")
    if report.error:
        lines.append(f"Error:           {report.error}")
    if source is not None:
        lines.append("")
        for i, text in enumerate(source.split("\n")):
            file_line = report.span[0] + i
            marker = ">>>" if file_line == report.root_cause_line else "   "
            lines.append(f"{marker} {file_line:4d} | {text}")
    return "\n".join(lines) + "\n"
