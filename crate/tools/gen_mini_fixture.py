#!/usr/bin/env python3
"""Builds the 20-account mini SAM fixtures (balanced + unbalanced variants).

Independent of the Rust code on purpose: the numbers this script prints are
frozen into the Rust tests as expected values.
"""
import csv
import os

HERE = os.path.dirname(os.path.abspath(__file__))
OUT = os.path.join(HERE, "..", "crates", "core", "fixtures")

# Canonical order: C, M, I, T, F, A, CAP, ROW; lexical within each set.
ACCOUNTS = [
    ("c_agr", "Agricultural goods", "C"),
    ("c_food", "Food products", "C"),
    ("c_manu", "Manufactures", "C"),
    ("c_srv", "Services", "C"),
    ("c_wat", "Water services", "C"),
    ("marg", "Trade margins", "M"),
    ("i_agr", "Agriculture", "I"),
    ("i_food", "Food processing", "I"),
    ("i_manu", "Manufacturing", "I"),
    ("i_srv", "Services industry", "I"),
    ("i_wat", "Water utilities", "I"),
    ("tax", "Net taxes", "T"),
    ("f_cap", "Capital", "F"),
    ("f_lab", "Labour", "F"),
    ("corp", "Corporations", "A"),
    ("gov", "Government", "A"),
    ("hh", "Households", "A"),
    ("k_corp", "Corporate capital account", "CAP"),
    ("k_hh", "Household capital account", "CAP"),
    ("row", "Rest of world", "ROW"),
]
IDX = {code: i for i, (code, _, _) in enumerate(ACCOUNTS)}
N = len(ACCOUNTS)
flows = [[0.0] * N for _ in range(N)]


def pay(payer, payee, v):
    """payer -> payee of value v: row payee, column payer."""
    flows[IDX[payee]][IDX[payer]] += v


# Domestic production: commodity accounts pay industries.
for com, ind, v in [
    ("c_agr", "i_agr", 100), ("c_food", "i_food", 150),
    ("c_manu", "i_manu", 200), ("c_srv", "i_srv", 250),
    ("c_wat", "i_wat", 50),
]:
    pay(com, ind, v)

# Intermediate consumption: industries pay commodity accounts.
intermediates = {
    "i_agr": {"c_manu": 10, "c_srv": 10, "c_wat": 5},
    "i_food": {"c_agr": 60, "c_manu": 10, "c_srv": 10, "c_wat": 5},
    "i_manu": {"c_manu": 30, "c_srv": 30, "c_wat": 5},
    "i_srv": {"c_manu": 20, "c_srv": 30, "c_wat": 5},
    "i_wat": {"c_manu": 5, "c_srv": 5},
}
for ind, uses in intermediates.items():
    for com, v in uses.items():
        pay(ind, com, v)

# Taxes.
for ind, v in [("i_agr", 5), ("i_food", 5), ("i_manu", 10), ("i_srv", 10), ("i_wat", 2)]:
    pay(ind, "tax", v)
for com, v in [("c_agr", 2), ("c_food", 8), ("c_manu", 10), ("c_srv", 5), ("c_wat", 1)]:
    pay(com, "tax", v)
pay("tax", "gov", 58)

# Factors.
for ind, v in [("i_agr", 40), ("i_food", 35), ("i_manu", 70), ("i_srv", 120), ("i_wat", 20)]:
    pay(ind, "f_lab", v)
for ind, v in [("i_agr", 30), ("i_food", 25), ("i_manu", 55), ("i_srv", 65), ("i_wat", 18)]:
    pay(ind, "f_cap", v)
pay("f_lab", "hh", 285)
for agent, v in [("hh", 40), ("corp", 140), ("gov", 13)]:
    pay("f_cap", agent, v)

# Margins: commodities pay the margin account, which buys services.
for com, v in [("c_agr", 5), ("c_food", 10), ("c_manu", 15)]:
    pay(com, "marg", v)
pay("marg", "c_srv", 30)

# Trade.
for com, v in [("c_agr", 10), ("c_manu", 50), ("c_srv", 10)]:
    pay(com, "row", v)  # imports
for com, v in [("c_agr", 20), ("c_food", 30), ("c_manu", 40)]:
    pay("row", com, v)  # exports

# Final consumption.
for com, v in [("c_agr", 37), ("c_food", 138), ("c_manu", 60), ("c_srv", 74), ("c_wat", 31)]:
    pay("hh", com, v)
for com, v in [("c_manu", 20), ("c_srv", 76)]:
    pay("gov", com, v)

# Investment.
pay("k_hh", "c_manu", 30)
pay("k_corp", "c_manu", 50)

# Transfers and savings.
pay("gov", "hh", 30)
pay("corp", "hh", 50)
pay("hh", "gov", 30)
pay("corp", "gov", 30)
pay("gov", "row", 5)
pay("hh", "row", 16)
pay("hh", "k_hh", 19)
pay("corp", "k_corp", 60)
pay("row", "k_hh", 11)
pay("k_corp", "row", 10)


def fmt(v):
    if v == int(v):
        return str(int(v))
    return repr(v)


def write_sam(path, m):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["account"] + [a[0] for a in ACCOUNTS])
        for r in range(N):
            w.writerow([ACCOUNTS[r][0]] + [fmt(m[r][c]) for c in range(N)])


def check(m, label):
    total = sum(sum(r) for r in m)
    print(f"{label}: grand total = {fmt(total)}")
    gaps = []
    for i in range(N):
        rs = sum(m[i])
        cs = sum(m[r][i] for r in range(N))
        if abs(rs - cs) > 1e-9:
            gaps.append((ACCOUNTS[i][0], rs - cs))
    if gaps:
        print(f"  gaps: {gaps}")
    else:
        print("  balanced")
    return total


os.makedirs(OUT, exist_ok=True)
write_sam(os.path.join(OUT, "mini_sam.csv"), flows)
check(flows, "mini_sam")

# Unbalanced variant: discrepancies confined to agent/capital accounts.
#   hh savings understated by 5  -> hh gap +5, k_hh gap -5
#   corp dividends overstated 3  -> hh gap +3, corp gap -3  (total hh +8)
unb = [r[:] for r in flows]
unb[IDX["k_hh"]][IDX["hh"]] -= 5.0
unb[IDX["hh"]][IDX["corp"]] += 3.0
write_sam(os.path.join(OUT, "mini_sam_unbalanced.csv"), unb)
check(unb, "mini_sam_unbalanced")

with open(os.path.join(OUT, "mini_accounts.csv"), "w", newline="") as f:
    w = csv.writer(f)
    w.writerow(["code", "label", "macro"])
    for code, label, mac in ACCOUNTS:
        w.writerow([code, label, mac])

# Aggregation map 20 -> 12; the water commodity and water industry are
# preserved (never merged).
MAP = [
    ("c_agr", "c_other", 0), ("c_food", "c_other", 0), ("c_manu", "c_other", 0),
    ("c_srv", "c_other", 0), ("c_wat", "c_wat", 1),
    ("marg", "marg", 0),
    ("i_agr", "i_agfd", 0), ("i_food", "i_agfd", 0),
    ("i_manu", "i_other", 0), ("i_srv", "i_other", 0), ("i_wat", "i_wat", 1),
    ("tax", "tax", 0),
    ("f_cap", "f_cap", 0), ("f_lab", "f_lab", 0),
    ("corp", "a_all", 0), ("gov", "a_all", 0), ("hh", "a_all", 0),
    ("k_corp", "k_all", 0), ("k_hh", "k_all", 0),
    ("row", "row", 0),
]
with open(os.path.join(OUT, "mini_map.csv"), "w", newline="") as f:
    w = csv.writer(f)
    w.writerow(["detailed_code", "model_code", "preserved"])
    for row_ in MAP:
        w.writerow(row_)
targets = sorted({t for _, t, _ in MAP})
print(f"aggregated accounts: {len(targets)} -> {targets}")
