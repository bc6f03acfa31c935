#!/usr/bin/env python3
"""Regenerate the committed synthetic fixtures under tests/fixtures/.

Deterministic: same seeds, same bytes. Contracts are synthetic Solidity with
one marker function per intent category, so labels are separable from source.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from smartintent.dataset import INTENT_CATEGORIES

FIXTURES = Path(__file__).resolve().parents[1] / "tests" / "fixtures"

MARKER_FUNCTIONS = {
    "Fee": (
        "    function setFees(uint256 liquidityFee, uint256 marketingFee, uint256 feeDenominator) external authorized {\n"
        "        totalFee = liquidityFee + marketingFee;\n"
        '        require(totalFee < feeDenominator / 4, "fee too high");\n'
        "    }"
    ),
    "DisableTrading": (
        "    function tradingStatus(bool status) public onlyOwner {\n"
        "        tradingOpen = status;\n"
        "    }"
    ),
    "Blacklist": (
        "    function updateBlacklist(address account, bool denied) external onlyOwner {\n"
        "        isBlacklisted[account] = denied;\n"
        "    }"
    ),
    "Reflect": (
        "    function setReflectionFee(uint256 share) external onlyOwner {\n"
        "        reflectionFee = share;\n"
        "        totalShares = totalShares - share;\n"
        "    }"
    ),
    "MaxTX": (
        "    function setTxLimit(uint256 amount) external authorized {\n"
        "        maxTxAmount = amount;\n"
        "    }"
    ),
    "Mint": (
        "    function mint(address account, uint256 amount) external onlyOwner {\n"
        "        totalSupply += amount;\n"
        "        balances[account] += amount;\n"
        "    }"
    ),
    "Honeypot": (
        "    function setSellTrap(address trap, bool enabled) internal {\n"
        "        sellTrap[trap] = enabled;\n"
        "        trapActive = enabled;\n"
        "    }"
    ),
    "Reward": (
        "    function setRewardToken(address token, uint256 share) external onlyOwner {\n"
        "        rewardToken = token;\n"
        "        rewardShare = share;\n"
        "    }"
    ),
    "Rebase": (
        "    function rebase(uint256 epoch, int256 supplyDelta) external onlyOwner returns (uint256) {\n"
        "        totalSupply = totalSupply + uint256(supplyDelta);\n"
        "        lastEpoch = epoch;\n"
        "        return totalSupply;\n"
        "    }"
    ),
    "MaxSell": (
        "    function setMaxSellAmount(uint256 amount) external onlyOwner {\n"
        "        maxSellAmount = amount;\n"
        "    }"
    ),
}

FILLER_FUNCTIONS = [
    (
        "    function balanceOf(address account) public view returns (uint256) {\n"
        "        return balances[account];\n"
        "    }"
    ),
    (
        "    function transfer(address recipient, uint256 amount) public returns (bool) {\n"
        "        balances[msg.sender] -= amount;\n"
        "        balances[recipient] += amount;\n"
        "        return true;\n"
        "    }"
    ),
    (
        "    function approve(address spender, uint256 amount) public returns (bool) {\n"
        "        allowances[msg.sender][spender] = amount;\n"
        "        return true;\n"
        "    }"
    ),
    (
        "    function owner() public view returns (address) {\n"
        "        return contractOwner;\n"
        "    }"
    ),
    (
        "    function decimals() public pure returns (uint8) {\n"
        "        return 18;\n"
        "    }"
    ),
]

CONSTRUCTOR = (
    "    constructor() {\n"
    "        contractOwner = msg.sender;\n"
    "        totalSupply = 1000000;\n"
    "    }"
)


def contract_source(name: str, positive: list[int], filler_picks: list[int]) -> str:
    parts = [
        "// synthetic token fixture",
        "pragma solidity ^0.8.0;",
        "",
        f"contract {name} {{",
        "    address contractOwner;",
        "    uint256 totalSupply;",
        "    mapping(address => uint256) balances;",
        "",
        CONSTRUCTOR,
    ]
    for pick in filler_picks:
        parts.append(FILLER_FUNCTIONS[pick])
    for class_idx in positive:
        parts.append(MARKER_FUNCTIONS[INTENT_CATEGORIES[class_idx]])
    parts.append("}")
    return "\n".join(parts) + "\n"


def write_jsonl(path: Path, records: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        for record in records:
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")


def gen_overfit(path: Path) -> None:
    rng = np.random.default_rng(20240)
    records = []
    for i in range(40):
        if i < 36:
            positive = sorted({i % 10} | ({(i * 3 + 1) % 10} if i % 3 == 0 else set()))
        else:
            positive = []
        labels = [1 if c in positive else 0 for c in range(10)]
        fillers = sorted(rng.choice(len(FILLER_FUNCTIONS), size=2, replace=False).tolist())
        records.append(
            {
                "id": f"0xOVERFIT{i:04d}",
                "source": contract_source(f"OverfitToken{i}", positive, fillers),
                "labels": labels,
            }
        )
    counts = [sum(r["labels"][c] for r in records) for c in range(10)]
    assert min(counts) >= 3, counts
    write_jsonl(path, records)
    print(f"overfit: {len(records)} contracts, per-class positives {counts}")


def gen_skewed(path: Path) -> None:
    rng = np.random.default_rng(77)
    rare_class = 9  # MaxSell at 2% prevalence
    rare_ids = {10, 60, 110, 160}
    records = []
    for i in range(200):
        positive = [c for c in range(9) if rng.random() < 0.22]
        if i in rare_ids:
            positive = sorted(set(positive) | {rare_class})
        labels = [1 if c in positive else 0 for c in range(10)]
        fillers = sorted(rng.choice(len(FILLER_FUNCTIONS), size=2, replace=False).tolist())
        records.append(
            {
                "id": f"0xSKEW{i:04d}",
                "source": contract_source(f"SkewToken{i}", positive, fillers),
                "labels": labels,
            }
        )
    counts = [sum(r["labels"][c] for r in records) for c in range(10)]
    assert counts[rare_class] == 4, counts
    assert min(counts[:9]) >= 20, counts
    write_jsonl(path, records)
    print(f"skewed: {len(records)} contracts, per-class positives {counts}")


PRETRAIN_SUBJECTS = [
    "Fee", "Limit", "Reward", "Supply", "Share", "Rate", "Cap", "Lock",
    "Epoch", "Bounty", "Quota", "Stake", "Basis", "Period", "Weight",
    "Bonus", "Tier", "Router", "Vault", "Oracle",
]

PRETRAIN_TEMPLATES = [
    (
        "set",
        "function set{A}(uint256 value) external onlyOwner {{\n"
        "    require(value < {lim}, \"{a} too high\");\n"
        "    {a}Value = value;\n"
        "}}",
    ),
    (
        "get",
        "function get{A}(uint256 basis) public view returns (uint256) {{\n"
        "    return {a}Value * basis / {lim};\n"
        "}}",
    ),
    (
        "update",
        "function update{A}(address account, uint256 value) external authorized {{\n"
        "    {a}Map[account] = value + {lim};\n"
        "}}",
    ),
    (
        "toggle",
        "function toggle{A}(bool enabled) public onlyOwner {{\n"
        "    {a}Enabled = enabled;\n"
        "    {a}Epoch = block.timestamp + {lim};\n"
        "}}",
    ),
    (
        "claim",
        "function claim{A}(address recipient) external returns (bool) {{\n"
        "    uint256 owed = {a}Value - {lim};\n"
        "    balances[recipient] += owed;\n"
        "    return true;\n"
        "}}",
    ),
]


def gen_pretrain(path: Path) -> None:
    rng = np.random.default_rng(4096)
    limits = [25, 100, 1000, 5000, 10000, 86400, 500000, 1000000]
    records = []
    ordinal = 0
    for subject in PRETRAIN_SUBJECTS:
        for prefix, template in PRETRAIN_TEMPLATES:
            lim = limits[int(rng.integers(0, len(limits)))]
            code = template.format(A=subject, a=subject.lower(), lim=lim)
            records.append(
                {
                    "id": "0xPRETRAIN",
                    "ordinal": ordinal,
                    "name": f"{prefix}{subject}",
                    "code": code,
                }
            )
            ordinal += 1
    assert len(records) == 100
    write_jsonl(path, records)
    print(f"pretrain: {len(records)} functions")


def main() -> None:
    gen_overfit(FIXTURES / "overfit40.jsonl")
    gen_skewed(FIXTURES / "skewed200.jsonl")
    gen_pretrain(FIXTURES / "pretrain_functions.jsonl")


if __name__ == "__main__":
    main()
