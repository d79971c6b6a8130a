"""Hand-built evaluation fixtures and a brute-force span oracle."""

# (target, a pointer seq2seq output, the insertion parser output), labelled format
QUALITATIVE = [
    ("[IN:GET_EVENT [SL:DATE_TIME summer SL:DATE_TIME] [SL:CATEGORY_EVENT concerts SL:CATEGORY_EVENT] IN:GET_EVENT]",
     "[IN:GET_EVENT [SL:CATEGORY_EVENT summer concerts SL:CATEGORY_EVENT] IN:GET_EVENT]",
     "[IN:GET_EVENT [SL:DATE_TIME summer SL:DATE_TIME] [SL:CATEGORY_EVENT concerts SL:CATEGORY_EVENT] IN:GET_EVENT]"),
    ("[IN:GET_EVENT [SL:CATEGORY_EVENT Art parties SL:CATEGORY_EVENT] for [SL:ATTRIBUTE_EVENT grownups "
     "SL:ATTRIBUTE_EVENT] in [SL:LOCATION Nashville SL:LOCATION] IN:GET_EVENT]",
     "[IN:GET_EVENT [SL:CATEGORY_EVENT Art parties for grownups SL:CATEGORY_EVENT] in [SL:LOCATION Nashville "
     "SL:LOCATION] IN:GET_EVENT]",
     "[IN:GET_EVENT [SL:CATEGORY_EVENT Art parties SL:CATEGORY_EVENT] for [SL:ATTRIBUTE_EVENT grownups "
     "SL:ATTRIBUTE_EVENT] in [SL:LOCATION Nashville SL:LOCATION] IN:GET_EVENT]"),
    ("[IN:GET_INFO_TRAFFIC is their a ton of traffic [SL:LOCATION [IN:GET_LOCATION [SL:SEARCH_RADIUS near "
     "SL:SEARCH_RADIUS] [SL:LOCATION balboa SL:LOCATION] IN:GET_LOCATION] SL:LOCATION] IN:GET_INFO_TRAFFIC]",
     "[IN:GET_INFO_TRAFFIC is their a [SL:DATE_TIME ton of SL:DATE_TIME] traffic [SL:LOCATION [IN:GET_LOCATION "
     "[SL:SEARCH_RADIUS near SL:SEARCH_RADIUS] [SL:LOCATION balboa SL:LOCATION] IN:GET_LOCATION] SL:LOCATION] "
     "IN:GET_INFO_TRAFFIC]",
     "[IN:GET_INFO_TRAFFIC is their a ton of traffic [SL:LOCATION [IN:GET_LOCATION [SL:SEARCH_RADIUS near "
     "SL:SEARCH_RADIUS] [SL:LOCATION balboa SL:LOCATION] IN:GET_LOCATION] SL:LOCATION] IN:GET_INFO_TRAFFIC]"),
    ("[IN:GET_DIRECTIONS Directions to [SL:DESTINATION [IN:GET_LOCATION [SL:POINT_ON_MAP Thriving Minds "
     "SL:POINT_ON_MAP] IN:GET_LOCATION] SL:DESTINATION] from [SL:SOURCE [IN:GET_LOCATION_SCHOOL [SL:CONTACT Aiden "
     "SL:CONTACT] 's school IN:GET_LOCATION_SCHOOL] SL:SOURCE] , need to arrive [SL:DATE_TIME_ARRIVAL by 4 pm "
     "SL:DATE_TIME_ARRIVAL] . IN:GET_DIRECTIONS]",
     "[IN:GET_DIRECTIONS Directions to [SL:DESTINATION [IN:GET_LOCATION_SCHOOL [SL:CONTACT Thriving SL:CONTACT] "
     "Minds IN:GET_LOCATION_SCHOOL] SL:DESTINATION] from [SL:SOURCE [IN:GET_LOCATION_SCHOOL [SL:CONTACT Aiden "
     "SL:CONTACT] 's school IN:GET_LOCATION_SCHOOL] SL:SOURCE] , need to arrive [SL:DATE_TIME_ARRIVAL by 4 pm "
     "SL:DATE_TIME_ARRIVAL] . IN:GET_DIRECTIONS]",
     "[IN:GET_DIRECTIONS Directions to [SL:DESTINATION [IN:GET_LOCATION [SL:POINT_ON_MAP Thriving Minds "
     "SL:POINT_ON_MAP] IN:GET_LOCATION] SL:DESTINATION] from [SL:SOURCE [IN:GET_LOCATION_SCHOOL [SL:CONTACT Aiden "
     "SL:CONTACT] 's school IN:GET_LOCATION_SCHOOL] SL:SOURCE] , need to arrive [SL:DATE_TIME_ARRIVAL by 4 pm "
     "SL:DATE_TIME_ARRIVAL] . IN:GET_DIRECTIONS]"),
]

# (profile, [(pred, gold), ...]); pred None means the decoder produced nothing
SPAN_FIXTURES = [
    ("top", [("[IN:A a b ]", "[IN:A a b ]")]),
    ("top", [("[IN:A a b ]", "[IN:B a b ]")]),
    ("top", [("[IN:A [SL:X a ] b ]", "[IN:A a [SL:X b ] ]")]),
    ("top", [("[IN:A [SL:X a b ] ]", "[IN:A [SL:X a ] [SL:Y b ] ]")]),
    ("top", [("[IN:A a b c d ]", "[IN:A [SL:X a ] [SL:Y b ] [SL:Z c d ] ]")]),
    ("top", [(None, "[IN:A [SL:X a ] b ]")]),
    ("top", [("[IN:A [SL:X [IN:B a ] ] ]", "[IN:A [SL:X [IN:B a ] ] ]"),
             ("[IN:B b c ]", "[IN:B [SL:Y b c ] ]")]),
    ("top", [("[IN:A [SL:X [IN:B a b ] ] c ]", "[IN:A [SL:X [IN:B a ] b ] c ]"),
             ("[IN:C d ]", "[IN:C d ]")]),
    ("top", [("[IN:A [SL:X a ] [SL:Y b ] c ]", "[IN:A [SL:X a ] [SL:Y b ] c ]"),
             ("[IN:A [SL:Y a ] ]", "[IN:A [SL:X a ] ]"),
             ("[IN:B [SL:Z a b ] c ]", "[IN:B [SL:Z a ] b c ]")]),
    ("top", [("[IN:A [SL:X [IN:B [SL:Y a ] b ] ] ]", "[IN:A [SL:X [IN:B [SL:Y a ] ] b ] ]")]),
    ("top", [("[IN:A [IN:B a ] b ]", "[IN:A [SL:X a ] b ]"), (None, "[IN:C c ]")]),
    ("top", [("[IN:A a [SL:X b c ] d ]", "[IN:A a [SL:X b c ] [SL:Y d ] ]"),
             ("[IN:A [SL:X a b c ] d ]", "[IN:A a [SL:X b c ] [SL:Y d ] ]")]),
    ("ner", [("a b c", "a [SL:X b ] c")]),
    ("ner", [("[SL:X a ] b", "[SL:X a ] b")]),
    ("ner", [("[SL:X a b ] c", "[SL:X a ] [SL:Y b ] c"), ("d e", "d e")]),
    ("ner", [("[SL:X [SL:Y a ] b ]", "[SL:X [SL:Y a ] b ]"), ("[SL:Z c ]", "[SL:Y c ]")]),
    ("ner", [("[SL:X a [SL:Y b ] ]", "[SL:X a ] [SL:Y b ]"), ("c [SL:Z d e ]", "[SL:Z c d e ]")]),
    ("ner", [("a b", "a b"), ("c", "c")]),
    ("ner", [(None, "[SL:X a ] b"), ("[SL:X a ] [SL:Y b ]", "[SL:X a ] [SL:Y b ]")]),
    ("ner", [("[SL:X a ] [SL:X b ] [SL:X c ]", "[SL:X a b c ]"),
             ("[SL:Y [SL:Z a b ] c ] d", "[SL:Y [SL:Z a b ] c ] d")]),
]


def bracket_spans(text):
    """Labelled spans read straight off a plain-format string with a stack."""
    out, stack, pos = set(), [], 0
    for tok in text.split():
        if tok.startswith("["):
            stack.append((tok[1:], pos))
        elif tok == "]":
            label, start = stack.pop()
            out.add((label, start, pos))
        else:
            pos += 1
    assert not stack
    return out


def brute_prf(pairs):
    hit = n_pred = n_gold = 0
    for pred, gold in pairs:
        g = bracket_spans(gold)
        p = bracket_spans(pred) if pred is not None else set()
        hit += sum(1 for s in p if s in g)
        n_pred += len(p)
        n_gold += len(g)
    prec = hit / n_pred if n_pred else 0.0
    rec = hit / n_gold if n_gold else 0.0
    return prec, rec, (2 * prec * rec / (prec + rec) if prec + rec else 0.0)
