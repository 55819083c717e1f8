#!/usr/bin/env python3
"""Regenerates the bundled fixtures under assets/.

Everything here is synthetic. Clause texts are assembled from phrase pools
with a fixed seed, so running the script twice produces identical files.
The option sets are reconstructions built around a handful of known
phrasings ("Tenant indemnifies Landlord", "There is mutual indemnification",
the Lessee/Tenant/Seller and Lessor/Landlord/Buyer equivalences).

Usage: python3 scripts/gen_fixtures.py [assets_dir]
"""

import json
import random
import sys
from pathlib import Path

ROOT = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "assets"

INDEMNITY_Q = "indemnity"
INFO_Q = "info_sharing"

LTT = "landlord_indemnifies_tenant"
TTL = "tenant_indemnifies_landlord"
MUTUAL = "mutual"
NONE = "none"
INDEMNITY_IDS = [LTT, TTL, MUTUAL, NONE]

ANY = "any_purpose"
PERFORM = "perform_agreement"
EVALUATE = "evaluate_transaction"
LEGAL = "legal_compliance"
RIGHTS = "exercise_rights"
INFO_IDS = [ANY, PERFORM, EVALUATE, LEGAL, RIGHTS]

RECONSTRUCTED = (
    "Reconstructed approximation built around known phrasings of each answer; "
    "the wording is not ground truth."
)


def write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def write_json(path: Path, value) -> None:
    write(path, json.dumps(value, indent=2, ensure_ascii=False) + "\n")


def write_jsonl(path: Path, rows) -> None:
    write(path, "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows))


# --- templates -------------------------------------------------------------

P1 = (
    "Referring only to the information contained in the clause below, only select which one "
    "of the below numbered options is implied by the clause, without providing any other "
    "information or justification.  If you cannot determine which of the conditions are "
    "implied, respond with the exact text: “The clause is silent”.\n"
    "{{Options}}\n"
    "{{Clause}}"
)

P2 = (
    "Referring only to the information contained in the clause below, only select the numbered "
    "option that is implied by the clause, without providing any other information or "
    "justification. If you cannot determine which of the conditions are implied, respond with "
    "the exact text: “The clause is silent”.\n"
    "{{Options}}\n"
    "{{Clause}}"
)

P3 = (
    "Using the text provided, follow the subsequent instructions:\n"
    "{{Clause}}\n"
    "Respond with all options which are implied by the provided text, without providing any "
    "other information or justification and by following the rules.\n"
    "Rules:\n"
    "    - If it cannot be determined which of the conditions are implied or if it is required "
    "to make assumptions, respond with the exact text: \"Unable to determine.\"\n"
    "    - If the terms in the options are not used in the text, respond with the exact text: "
    "\"Unable to determine.\"\n"
    "Options:\n"
    "{{Options}}"
)

P4 = (
    "Read the following permitted use of confidential information legal clause: \n"
    "{{Clause}}\n"
    "Pretend you are a party to the agreement in which the permitted use of confidential "
    "information legal clause you have read exists in. You only know what you have read in "
    "this prompt. For what purposes are you allowed to use the confidential information? If the "
    "clause does not specify the purpose for which you may use the confidential information, "
    "respond with: \"Unable to determine\". In your response, only include the following most "
    "correct groups:\n"
    "{{Options}}\n"
    "In your response, only include the bucket names above. Do not provide an explanation or "
    "additional information."
)

TEMPLATES = [
    ("P1", "single", "dot", ["The clause is silent"], P1),
    ("P2", "single", "paren", ["The clause is silent"], P2),
    ("P3", "multi", "dot", ["Unable to determine"], P3),
    ("P4", "multi", "dot", ["Unable to determine"], P4),
]


def template_file(tid, mode, style, escapes, body):
    return (
        f"---\nid: {tid}\nselection_mode: {mode}\nnumbering_style: {style}\n"
        f"escape_phrases: {json.dumps(escapes, ensure_ascii=False)}\n---\n{body}\n"
    )


# --- option sets -----------------------------------------------------------

def option(cid, text, aliases=()):
    o = {"canonical_id": cid, "text": text}
    if aliases:
        o["aliases"] = list(aliases)
    return o


OPTION_SETS = {
    "S1": (INDEMNITY_Q, "parties", [
        option(LTT, "Landlord indemnifies Tenant"),
        option(TTL, "Tenant indemnifies Landlord"),
        option(MUTUAL, "There is mutual indemnification", ["Mutual indemnification"]),
        option(NONE, "No indemnification", ["There is no indemnification"]),
    ]),
    "S2": (INDEMNITY_Q, "parties", [
        option(LTT, "The landlord indemnifies the tenant"),
        option(TTL, "The tenant indemnifies the landlord"),
        option(MUTUAL, "The landlord and the tenant indemnify each other"),
        option(NONE, "Neither party indemnifies the other"),
    ]),
    "S3": (INDEMNITY_Q, "parties", [
        option(LTT, "Only the landlord provides an indemnity"),
        option(TTL, "Only the tenant provides an indemnity"),
        option(MUTUAL, "There is mutual indemnification"),
        option(NONE, "There is no indemnity in the clause"),
    ]),
    "S4": (INDEMNITY_Q, "parties", [
        option(LTT, "Landlord (also Lessor or Buyer) indemnifies Tenant (also Lessee or Seller)",
               ["Landlord indemnifies Tenant"]),
        option(TTL, "Tenant (also Lessee or Seller) indemnifies Landlord (also Lessor or Buyer)",
               ["Tenant indemnifies Landlord"]),
        option(MUTUAL, "Landlord (also Lessor or Buyer) and Tenant (also Lessee or Seller) indemnify each other",
               ["Landlord and Tenant indemnify each other"]),
        option(NONE, "Neither Landlord nor Tenant provides an indemnity"),
    ]),
    "T1": (INFO_Q, None, [
        option(ANY, "Any purpose"),
        option(PERFORM, "Performing the agreement"),
        option(EVALUATE, "Evaluating a transaction"),
        option(LEGAL, "Legal compliance"),
        option(RIGHTS, "Exercising rights"),
    ]),
    "T2": (INFO_Q, None, [
        option(ANY, "The information may be used for any purpose."),
        option(PERFORM, "The information may be used to perform obligations under the agreement."),
        option(EVALUATE, "The information may be used to evaluate or negotiate a proposed transaction."),
        option(LEGAL, "The information may be used to comply with legal or regulatory requirements."),
        option(RIGHTS, "The information may be used to exercise or enforce rights under the agreement."),
    ]),
}

SYNONYMS = {"id": "parties", "groups": [["Lessee", "Tenant", "Seller"], ["Lessor", "Landlord", "Buyer"]]}

QUESTIONS = [
    {"id": INDEMNITY_Q, "text": "In the clause below, who indemnifies whom?",
     "mode": "single_select", "option_set_id": "S1"},
    {"id": INFO_Q, "text": "For what purpose are the parties sharing information according to the clause below?",
     "mode": "multi_select", "option_set_id": "T1"},
]

# --- indemnity clauses -----------------------------------------------------

PARTIES = [("Landlord", "Tenant"), ("Lessor", "Lessee"), ("Buyer", "Seller")]
PREMISES = ["Premises", "Leased Property", "Property", "Building", "Demised Premises", "Site", "Land"]
AGENTS = [
    "officers, directors, employees and agents",
    "affiliates, lenders and property managers",
    "successors and assigns",
    "employees, contractors and invitees",
    "partners, members and managers",
]
SUBSTANCES = ["Hazardous Materials", "Hazardous Substances", "Environmental Contaminants", "Regulated Substances"]
LOSSES = [
    "any and all claims, losses, damages, costs and expenses (including reasonable attorneys' fees)",
    "all Environmental Liabilities",
    "any fines, penalties, remediation costs and third-party claims",
    "all losses, liabilities and clean-up costs",
]
TAILS = [
    "This obligation shall survive the expiration or earlier termination of this Lease.",
    "The provisions of this Section shall survive the termination of the Lease.",
    "Any amounts payable under this Section shall be paid within thirty (30) days after demand.",
    "",
    "",
]


def lead(rng):
    return f"{rng.randint(5, 42)}.{rng.randint(1, 9)} Environmental Indemnity. "


def indemnity_text(rng, label, idx):
    landlord, tenant = rng.choice(PARTIES)
    premises = rng.choice(PREMISES)
    agents = rng.choice(AGENTS)
    subst = rng.choice(SUBSTANCES)
    losses = rng.choice(LOSSES)
    tail = rng.choice(TAILS)
    parcel = f"Parcel {idx:03d}"
    if label == LTT:
        body = (
            f"{landlord} shall indemnify, defend and hold harmless {tenant} and its {agents} from and against "
            f"{losses} arising from {subst} present at, on or under the {premises} ({parcel}) prior to the "
            f"Commencement Date, except to the extent introduced by {tenant}."
        )
    elif label == TTL:
        body = (
            f"{tenant} shall indemnify, defend and hold {landlord} and its {agents} harmless from and against "
            f"{losses} arising out of the presence, use, release or disposal of {subst} on or about the "
            f"{premises} ({parcel}) caused by {tenant} or its contractors during the Term."
        )
    elif label == MUTUAL:
        body = (
            f"{landlord} shall indemnify and hold harmless {tenant} from {losses} arising from {subst} existing "
            f"on the {premises} ({parcel}) before the Commencement Date. {tenant} shall indemnify and hold "
            f"harmless {landlord} from {losses} arising from {subst} brought onto the {premises} by {tenant} "
            f"or its {agents}."
        )
    else:
        body = (
            f"{tenant} shall comply with all Environmental Laws applicable to its use of the {premises} "
            f"({parcel}) and shall promptly notify {landlord} in writing of any release of {subst}. Neither "
            f"party shall have any obligation to indemnify the other with respect to {subst}, and each party "
            f"waives any such claim."
        )
    return (lead(rng) + body + (" " + tail if tail else "")).strip()


def indemnity_dataset(rng, prefix, labels, source):
    rows = []
    for i, label in enumerate(labels, start=1):
        cid = f"{prefix}-{i:03d}"
        rows.append((cid, indemnity_text(rng, label, i), label))
    return rows


def manifest(question_id, distribution=None):
    m = {"kind": "manifest", "question_id": question_id, "max_chars": 20000}
    if distribution:
        m["label_distribution"] = distribution
    return m


def clause_row(cid, ctype, text, source):
    return {"kind": "clause", "id": cid, "clause_type": ctype, "text": text, "source": source}


def label_row(cid, qid, ids, insufficient=False):
    return {"kind": "label", "clause_id": cid, "question_id": qid, "option_ids": sorted(ids),
            "insufficient": insufficient}


def indemnity_jsonl(path, rows, source, declare=True):
    dist = {k: 0 for k in INDEMNITY_IDS}
    for _, _, label in rows:
        dist[label] += 1
    out = [manifest(INDEMNITY_Q, dist if declare else None)]
    out += [clause_row(cid, "environmental_indemnity", text, source) for cid, text, _ in rows]
    out += [label_row(cid, INDEMNITY_Q, [label]) for cid, _, label in rows]
    write_jsonl(path, out)


# A mutual indemnity lease clause that models tend to summarize instead of answering.
MUTUAL_LEASE_CLAUSE = (
    "Environmental Indemnity. Lessor shall indemnify, defend and hold harmless the Lessee Indemnified "
    "Parties from and against any and all Environmental Liabilities, except to the extent caused by the "
    "grossly negligent or wilful misconduct of Lessee, Manager, or subtenants of Lessee or Manager, and "
    "their respective employees, agents or independent contractors. Lessee shall indemnify, defend and hold "
    "harmless the Lessor Indemnified Parties from and against any and all Environmental Liabilities caused "
    "by the grossly negligent or wilful misconduct of Lessee, Manager, or subtenants of Lessee or Manager, "
    "and their respective employees, agents or independent contractors."
)

# --- information-sharing clauses -------------------------------------------

RECIPIENTS = ["the Receiving Party", "the Recipient", "each party", "Company", "the Consultant"]
PURPOSE_SENTENCES = {
    ANY: [
        "{r} may use the Confidential Information for any purpose whatsoever.",
        "{r} shall be free to use the Confidential Information for any lawful purpose.",
    ],
    PERFORM: [
        "{r} shall use the Confidential Information solely to perform its obligations under this Agreement.",
        "{r} may use the Confidential Information only as necessary to provide the Services.",
        "{r} shall use the Confidential Information exclusively for the performance of this Agreement.",
    ],
    EVALUATE: [
        "{r} may use the Confidential Information only to evaluate the Proposed Transaction.",
        "{r} shall use the Confidential Information solely for the purpose of evaluating and negotiating a possible business combination.",
        "{r} may use the Confidential Information to assess whether to enter into the Transaction.",
    ],
    LEGAL: [
        "{r} may use the Confidential Information to the extent required to comply with applicable law or the rules of any securities exchange.",
        "{r} may use the Confidential Information to satisfy regulatory reporting obligations.",
    ],
    RIGHTS: [
        "{r} may also use the Confidential Information to exercise its rights under this Agreement.",
        "{r} may use the Confidential Information to enforce its rights and remedies under this Agreement.",
        "{r} may use the Confidential Information in connection with the exercise of its licence rights.",
    ],
}
INSUFFICIENT_SENTENCES = [
    "{r} shall hold the Confidential Information in strict confidence and shall protect it with at least reasonable care.",
    "{r} shall not disclose the Confidential Information to any third party without prior written consent.",
    "{r} shall return or destroy all Confidential Information upon written request.",
]


def info_text(rng, ids, idx, insufficient):
    r = rng.choice(RECIPIENTS)
    head = f"Section {rng.randint(2, 19)}.{rng.randint(1, 9)} (Agreement No. {1000 + idx}). "
    if insufficient:
        picks = rng.sample(INSUFFICIENT_SENTENCES, 2)
    else:
        picks = [rng.choice(PURPOSE_SENTENCES[i]) for i in INFO_IDS if i in ids]
        picks.append(rng.choice(INSUFFICIENT_SENTENCES))
    text = " ".join(p.format(r=r) for p in picks)
    return head + text[0].upper() + text[1:]


def info_label_sets():
    """130 label sets with per-option totals 4/81/40/2/57, every set non-empty."""
    sets = [set() for _ in range(130)]
    for i in range(0, 81):
        sets[i].add(PERFORM)
    for i in range(81, 121):
        sets[i].add(EVALUATE)
    for i in list(range(121, 130)) + list(range(0, 48)):
        sets[i].add(RIGHTS)
    for i in range(81, 85):
        sets[i].add(ANY)
    for i in range(0, 2):
        sets[i].add(LEGAL)
    return sets


def info_dataset(path, rng):
    sets = info_label_sets()
    entries = [(s, False) for s in sets] + [(set(), True) for _ in range(13)]
    rng.shuffle(entries)
    dist = {k: 0 for k in INFO_IDS}
    clauses, labels = [], []
    for i, (ids, insufficient) in enumerate(entries, start=1):
        cid = f"INF-{i:03d}"
        for k in ids:
            dist[k] += 1
        clauses.append(clause_row(cid, "permitted_use_confidential_information",
                                  info_text(rng, ids, i, insufficient), "synthetic"))
        labels.append(label_row(cid, INFO_Q, ids, insufficient))
    write_jsonl(path, [manifest(INFO_Q, dist)] + clauses + labels)


def info_examples(path, rng):
    rows, labels = [], []
    for i, cid_label in enumerate(INFO_IDS * 2, start=1):
        cid = f"EX-INF-{i:03d}"
        rows.append(clause_row(cid, "permitted_use_confidential_information",
                               info_text(rng, {cid_label}, 500 + i, False), "synthetic example"))
        labels.append(label_row(cid, INFO_Q, [cid_label]))
    write_jsonl(path, [manifest(INFO_Q)] + rows + labels)


# --- mock responses for the small fixture ----------------------------------

# One scripted response per clause, covering the surface forms seen in
# practice: exact option text, preambles, party synonyms, numbered answers,
# summaries and escapes.
SMALL = [
    (MUTUAL, "Lessor indemnifies Lessee Indemnified Parties. Lessee indemnifies Lessor Indemnified Parties."),
    (TTL, "Tenant indemnifies Landlord."),
    (TTL, "The clause implies that Tenant indemnifies Landlord."),
    (TTL, "Lessee indemnifies Lessor"),
    (LTT, "Landlord indemnifies Tenant"),
    (MUTUAL, "There is mutual indemnification."),
    (TTL, "2. Tenant indemnifies Landlord"),
    (MUTUAL, "Tenant indemnifies Landlord."),
    (LTT, "Seller indemnifies Buyer and its affiliates for any remediation costs."),
    (NONE, "The clause is silent."),
]


def main():
    rng = random.Random(20231016)

    for tid, mode, style, escapes, body in TEMPLATES:
        write(ROOT / "templates" / f"{tid}.tmpl", template_file(tid, mode, style, escapes, body))

    for sid, (qid, syn, options) in OPTION_SETS.items():
        doc = {"id": sid, "question_id": qid}
        if syn:
            doc["synonym_table_id"] = syn
        doc["notes"] = RECONSTRUCTED
        doc["options"] = options
        write_json(ROOT / "option_sets" / f"{sid}.json", doc)

    write_json(ROOT / "synonyms" / "parties.json", SYNONYMS)

    labels = [LTT] * 6 + [TTL] * 71 + [MUTUAL] * 39 + [NONE] * 5
    rng.shuffle(labels)
    indemnity_jsonl(ROOT / "datasets" / "indemnity.jsonl",
                    indemnity_dataset(rng, "IND", labels, "synthetic"), "synthetic")

    small = [("IND-S-001", MUTUAL_LEASE_CLAUSE, MUTUAL)]
    for i, (label, _) in enumerate(SMALL[1:], start=2):
        small.append((f"IND-S-{i:03d}", indemnity_text(rng, label, 900 + i), label))
    indemnity_jsonl(ROOT / "datasets" / "indemnity_small.jsonl", small, "synthetic")

    examples = indemnity_dataset(rng, "EX-IND", INDEMNITY_IDS * 2, "synthetic example")
    indemnity_jsonl(ROOT / "datasets" / "indemnity_examples.jsonl", examples, "synthetic example", declare=False)

    write_json(ROOT / "example_sets" / "E1.json", {
        "id": "E1",
        "examples": [{"clause_id": cid, "answer_option_ids": [label]} for cid, _, label in examples[:4]],
    })
    write_json(ROOT / "example_sets" / "E2.json", {
        "id": "E2",
        "examples": [{"clause_id": cid, "answer_option_ids": [label]} for cid, _, label in examples[4:]],
    })

    info_dataset(ROOT / "datasets" / "info_sharing.jsonl", rng)
    info_examples(ROOT / "datasets" / "info_sharing_examples.jsonl", rng)
    for n, ids in (("IS-E1", range(1, 6)), ("IS-E2", range(6, 11))):
        write_json(ROOT / "example_sets" / f"{n}.json", {
            "id": n,
            "examples": [
                {"clause_id": f"EX-INF-{i:03d}", "answer_option_ids": [INFO_IDS[(i - 1) % 5]]} for i in ids
            ],
        })

    # Parcel numbers are unique per clause, so each rule picks out exactly
    # one clause of the small fixture.
    rules = [{"contains": "Lessee Indemnified Parties", "responses": [SMALL[0][1]]}]
    for i, (_, response) in enumerate(SMALL[1:], start=2):
        rules.append({"contains": f"(Parcel {900 + i:03d})", "responses": [response]})
    write_json(ROOT / "mocks" / "indemnity_small.json", {"rules": rules})

    write_json(ROOT / "registry.json", {
        "questions": QUESTIONS,
        "option_sets": {sid: f"option_sets/{sid}.json" for sid in OPTION_SETS},
        "templates": {tid: f"templates/{tid}.tmpl" for tid, *_ in TEMPLATES},
        "synonym_tables": {"parties": "synonyms/parties.json"},
        "example_sets": {n: f"example_sets/{n}.json" for n in ("E1", "E2", "IS-E1", "IS-E2")},
        "datasets": {
            "indemnity": "datasets/indemnity.jsonl",
            "indemnity_small": "datasets/indemnity_small.jsonl",
            "indemnity_examples": "datasets/indemnity_examples.jsonl",
            "info_sharing": "datasets/info_sharing.jsonl",
            "info_sharing_examples": "datasets/info_sharing_examples.jsonl",
        },
    })


if __name__ == "__main__":
    main()
