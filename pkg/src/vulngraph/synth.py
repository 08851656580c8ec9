"""Synthetic desk-scale corpus with known labels, ranges, and root causes.

Each vulnerable function plants a def-use pair: a root line introduces a
risky value (allocate too little, fetch a maybe-NULL pointer, overflow an
integer, free a buffer) and the vulnerable lines consume it. Filler lines
are identical across all functions so they carry no class signal; the
root and vulnerable lines carry both class-specific calls and
function-unique identifiers. That construction makes the ground-truth
root-cause line known exactly, which is what the end-to-end sanity runs
check against.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .corpus import FunctionRecord

#: Filler statements shared verbatim by every generated function.
_FILLER = (
    "    int step = count + 1;",
    "    int hops = step + 2;",
    "    int mark = hops + 3;",
    "    int seal = mark + 4;",
)

_VULN_SHAPES = {
    "CWE-119": {
        "root": "    char *dst_{u} = malloc(8);",
        "vul": ("    strcpy(dst_{u}, input);",
                "    dst_{u}[count] = step;"),
    },
    "CWE-476": {
        "root": "    char *slot_{u} = find_entry(input);",
        "vul": ("    *slot_{u} = count;",
                "    slot_{u}[1] = step;"),
    },
    "CWE-190": {
        "root": "    int total_{u} = count * 4096;",
        "vul": ("    int cell_{u} = total_{u} + count;",
                "    put_item(cell_{u}, total_{u});"),
    },
    "CWE-416": {
        "root": "    free(input);",
        "vul": ("    input[0] = step;",
                "    copy_bytes(input, count);"),
    },
}


@dataclass(frozen=True)
class PlantedTruth:
    root_line: int
    cwe: str


def make_toy_corpus(seed: int = 0, per_class: int = 4, benign: int = 16
                    ) -> tuple[list[FunctionRecord], dict[str, PlantedTruth]]:
    """Generate labeled records plus the planted root-cause line per id."""
    rng = random.Random(seed)
    records: list[FunctionRecord] = []
    truth: dict[str, PlantedTruth] = {}
    serial = 0

    for cwe, shape in _VULN_SHAPES.items():
        for _ in range(per_class):
            uid = f"{serial:02d}"
            serial += 1
            pre = rng.randint(1, 3)
            mid = rng.randint(0, min(2, len(_FILLER) - pre))
            lines = [f"static int probe_{uid}(char *input, int count) {{"]
            lines.extend(_FILLER[:pre])
            root_line = len(lines) + 1
            lines.append(shape["root"].format(u=uid))
            lines.extend(_FILLER[pre:pre + mid])
            vul_start = len(lines) + 1
            lines.extend(part.format(u=uid) for part in shape["vul"])
            vul_end = len(lines)
            lines.append("    return count;")
            lines.append("}")
            record_id = f"vuln_{cwe.lower().replace('-', '')}_{uid}"
            records.append(FunctionRecord(
                id=record_id,
                source="\n".join(lines),
                language="c",
                cwe=cwe,
                vul_start=vul_start,
                vul_end=vul_end,
            ))
            truth[record_id] = PlantedTruth(root_line=root_line, cwe=cwe)

    for _ in range(benign):
        uid = f"{serial:02d}"
        serial += 1
        pre = rng.randint(1, 4)
        lines = [f"static int probe_{uid}(char *input, int count) {{"]
        lines.extend(_FILLER[:pre])
        lines.append(f"    int calm_{uid} = count + 7;")
        lines.append(f"    calm_{uid} = calm_{uid} + step;")
        lines.append(f"    return calm_{uid};")
        lines.append("}")
        records.append(FunctionRecord(
            id=f"benign_{uid}",
            source="\n".join(lines),
            language="c",
        ))

    rng.shuffle(records)
    return records, truth
