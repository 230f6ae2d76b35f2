"""Token accuracy and span-based F1 over BIO tag sequences.

BIO handling is lenient, matching the dominant CoNLL evaluator behaviour:
an I-tag without a preceding B/I of the same type opens a new span. Spans
are (sequence_id, start, end, type) with an exclusive end.

Edge conventions for span F1, deliberate and tested: an empty prediction
(or gold) set contributes precision (recall) 0; when both sets are empty
the F1 is 1.0 (nothing to find, nothing found wrongly).
"""


def token_accuracy(pred, gold):
    if len(pred) != len(gold):
        raise ValueError(f"length mismatch: {len(pred)} predictions vs {len(gold)} gold labels")
    if not gold:
        raise ValueError("empty label sequences")
    return sum(p == g for p, g in zip(pred, gold)) / len(gold)


def _split_tag(tag):
    if tag == "O":
        return "O", None
    if len(tag) > 2 and tag[1] == "-" and tag[0] in ("B", "I"):
        return tag[0], tag[2:]
    raise ValueError(f"unknown BIO tag {tag!r}")


def extract_spans(labels):
    """Typed spans of one BIO sequence, as (start, end, type), end exclusive."""
    spans = []
    start, kind = None, None

    def close(end):
        nonlocal start, kind
        if start is not None:
            spans.append((start, end, kind))
            start, kind = None, None

    for i, tag in enumerate(labels):
        marker, typ = _split_tag(tag)
        if marker == "O":
            close(i)
        elif marker == "B":
            close(i)
            start, kind = i, typ
        else:  # lenient: I- continues a same-type span, otherwise opens one
            if kind != typ:
                close(i)
                start, kind = i, typ
    close(len(labels))
    return spans


def spans_to_labels(spans, length):
    """Rebuild a BIO sequence from typed spans (inverse of extract_spans)."""
    labels = ["O"] * length
    for start, end, typ in spans:
        labels[start] = f"B-{typ}"
        for i in range(start + 1, end):
            labels[i] = f"I-{typ}"
    return labels


def span_f1(pred_sequences, gold_sequences):
    """Corpus-level (precision, recall, f1) over exact typed span matches."""
    if len(pred_sequences) != len(gold_sequences):
        raise ValueError("prediction and gold corpora differ in length")
    pred_set, gold_set = set(), set()
    for sid, (pred, gold) in enumerate(zip(pred_sequences, gold_sequences)):
        if len(pred) != len(gold):
            raise ValueError(f"sequence {sid}: length mismatch")
        pred_set.update((sid, *span) for span in extract_spans(pred))
        gold_set.update((sid, *span) for span in extract_spans(gold))
    hit = len(pred_set & gold_set)
    precision = hit / len(pred_set) if pred_set else 0.0
    recall = hit / len(gold_set) if gold_set else 0.0
    if not pred_set and not gold_set:
        return precision, recall, 1.0
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return precision, recall, f1
