#!/usr/bin/env python3
"""Convert an upstream double-auction export into cdainv corpus files.

Column names in COLUMN_MAP are unverified guesses; edit them to match the
files you actually have. See upstream-mapping.md.
"""
import argparse
import csv
import os
import sys

COLUMN_MAP = {
    "session": "Session",
    "group": "Group",
    "round": "Period",
    "time": "TimeStamp",
    "subject": "Subject",
    "role": "Role",
    "offer": "Offer",
    "buyer": "BuyerSubject",
    "seller": "SellerSubject",
    "price": "Price",
    "buyer_price": "BuyerPays",
    "seller_price": "SellerGets",
    "value": "Value",
    "feedback": "Feedback",
    "rule": "PriceRule",
}

ROLE_MAP = {"buyer": "B", "seller": "S", "b": "B", "s": "S"}
FEEDBACK_MAP = {"blackbox": "BlackBox", "black box": "BlackBox", "full": "Full", "same": "Same", "other": "Other"}
RULE_MAP = {"first": "First", "random": "Random", "mmk": "MMK", "matchmaker": "MMK"}


def read(path):
    with open(path, newline="", encoding="utf-8-sig") as f:
        return list(csv.DictReader(f))


def col(row, key, path):
    name = COLUMN_MAP[key]
    if name not in row:
        sys.exit(f"{path}: column '{name}' (for {key}) not found; edit COLUMN_MAP")
    return row[name].strip()


def market(row, path):
    return f"{col(row, 'session', path)}-{col(row, 'group', path)}"


def lookup(table, value, what):
    try:
        return table[value.strip().lower()]
    except KeyError:
        sys.exit(f"unknown {what} '{value}'; extend the mapping table")


def write(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--offers", required=True)
    ap.add_argument("--deals", help="separate deals table; omit with --deal-flag")
    ap.add_argument("--deal-flag", help="column in the offers table marking accepted offers")
    ap.add_argument("--subjects", help="per-subject values; omit for predict-only corpora")
    ap.add_argument("--sessions", required=True, help="per-market treatment table")
    ap.add_argument("--out", required=True)
    args = ap.parse_args()
    if bool(args.deals) == bool(args.deal_flag):
        sys.exit("give exactly one of --deals and --deal-flag")
    os.makedirs(args.out, exist_ok=True)

    offers = read(args.offers)
    if args.deal_flag:
        deals = [r for r in offers if r.get(args.deal_flag, "").strip() not in ("", "0")]
        offers = [r for r in offers if r not in deals]
        deals_path = args.offers
    else:
        deals, deals_path = read(args.deals), args.deals

    events = [
        [market(r, args.offers), col(r, "round", args.offers), col(r, "time", args.offers),
         col(r, "subject", args.offers), lookup(ROLE_MAP, col(r, "role", args.offers), "role"),
         col(r, "offer", args.offers)]
        for r in offers
    ]
    write(os.path.join(args.out, "events.csv"), ["market_id", "round", "time", "actor_id", "side", "price"], events)

    deal_rows = []
    for r in deals:
        price = col(r, "price", deals_path)
        bp = r.get(COLUMN_MAP["buyer_price"], "").strip() or price
        sp = r.get(COLUMN_MAP["seller_price"], "").strip() or price
        deal_rows.append([market(r, deals_path), col(r, "round", deals_path), col(r, "time", deals_path),
                          col(r, "buyer", deals_path), col(r, "seller", deals_path), price, bp, sp])
    write(os.path.join(args.out, "deals.csv"),
          ["market_id", "round", "time", "buyer_id", "seller_id", "price", "buyer_price", "seller_price"], deal_rows)

    if args.subjects:
        vals = [
            [market(r, args.subjects), col(r, "subject", args.subjects),
             lookup(ROLE_MAP, col(r, "role", args.subjects), "role"), col(r, "value", args.subjects)]
            for r in read(args.subjects)
        ]
        write(os.path.join(args.out, "valuations.csv"), ["market_id", "actor_id", "side", "reservation_value"], vals)

    seen = {}
    for r in read(args.sessions):
        m = market(r, args.sessions)
        seen.setdefault(m, [m, lookup(FEEDBACK_MAP, col(r, "feedback", args.sessions), "feedback setting"),
                            lookup(RULE_MAP, col(r, "rule", args.sessions), "price rule")])
    write(os.path.join(args.out, "treatments.csv"), ["market_id", "feedback_setting", "price_rule"], list(seen.values()))


if __name__ == "__main__":
    main()
