#!/usr/bin/env python3
"""Write the golden P1 telegram corpus and the values a reader must extract.

Independent of the Rust code: its own CRC-16/ARC, its own local-time
handling (zoneinfo) and its own number formatting. Run from the repo root:

    python3 scripts/gen_p1_corpus.py crates/core/tests/data/p1
"""

import json
import random
import sys
from datetime import datetime, timedelta, timezone
from decimal import Decimal
from pathlib import Path
from zoneinfo import ZoneInfo

AMS = ZoneInfo("Europe/Amsterdam")


def crc16_arc(data: bytes) -> int:
    crc = 0
    for byte in data:
        crc ^= byte
        for _ in range(8):
            crc = (crc >> 1) ^ 0xA001 if crc & 1 else crc >> 1
    return crc


def local_stamp(t: int, flagged: bool) -> str:
    local = datetime.fromtimestamp(t, AMS)
    text = local.strftime("%y%m%d%H%M%S")
    if flagged:
        text += "S" if local.dst() else "W"
    return text


def canonical(text: str) -> str:
    return f"{Decimal(text):.3f}"


def flagless_not_after(text: str, reference: int) -> int:
    naive = datetime.strptime(text, "%y%m%d%H%M%S")
    candidates = set()
    for fold in (0, 1):
        aware = naive.replace(tzinfo=AMS, fold=fold)
        # skip instants that do not exist (spring gap)
        if aware.astimezone(timezone.utc).astimezone(AMS).replace(tzinfo=None) == naive:
            candidates.add(int(aware.timestamp()))
    ordered = sorted(candidates)
    before = [c for c in ordered if c <= reference]
    return before[-1] if before else ordered[0]


def register(rng: random.Random, int_digits: int) -> str:
    whole = rng.randrange(0, 10 ** min(int_digits, 6))
    return f"{whole:0{int_digits}d}.{rng.randrange(1000):03d}"


HEADERS = {
    "3.0": ["ISk5\\2ME382-1003", "KMP5 KA6U001585575011", "XMX5XMXABCE000018914"],
    "4.2": ["KFM5KAIFA-METER", "XMX5LGBBFFB231215493", "ISk5\\2MT382-1000"],
    "5.0": ["Ene5\\T210-D ESMR5.0", "ISK5\\2M550T-1012", "XMX5LGF0010455437493"],
}


def telegram(version: str, t: int, rng: random.Random, variant: int):
    header = HEADERS[version][variant % 3]
    digits = 5 if version == "3.0" else 6
    regs = {
        "1-0:1.8.1": register(rng, digits),
        "1-0:1.8.2": register(rng, digits),
        "1-0:2.8.1": register(rng, digits),
        "1-0:2.8.2": register(rng, digits),
    }
    gas_value = f"{rng.randrange(100000):05d}.{rng.randrange(1000):03d}"
    gas_interval = 300 if version == "5.0" else 3600
    gas_time = t - t % gas_interval - (gas_interval if variant % 2 else 0)
    channel = 1 + variant % 2 if version != "3.0" else 1

    lines = [f"/{header}", ""]
    if version != "3.0":
        lines.append(f"1-3:0.2.8({version.replace('.', '')})")
        lines.append(f"0-0:1.0.0({local_stamp(t, True)})")
    lines.append(f"0-0:96.1.1({rng.randbytes(17).hex().upper()})")
    order = list(regs)
    if variant == 3:
        order.reverse()
    for ref in order:
        lines.append(f"{ref}({regs[ref]}*kWh)")
    lines.append(f"0-0:96.14.0({rng.randrange(1, 3):04d})")
    lines.append(f"1-0:1.7.0({rng.randrange(100):02d}.{rng.randrange(1000):03d}*kW)")
    lines.append("1-0:2.7.0(00.000*kW)")
    if version == "3.0":
        lines.append("0-0:17.0.0(999*A)")
        lines.append("0-0:96.3.10(1)")
        lines.append("0-0:96.13.1()")
        lines.append("0-0:96.13.0()" if variant != 2 else "0-0:96.13.0(303132333435363738393A3B3C3D3E3F)")
        lines.append("0-1:24.1.0(3)")
        lines.append(f"0-1:96.1.0({rng.randbytes(16).hex().upper()})")
        lines.append(f"0-1:24.3.0({local_stamp(gas_time, False)})(00)(60)(1)(0-1:24.2.1)(m3)")
        lines.append(f"({gas_value})")
        lines.append("0-1:24.4.0(1)")
    else:
        lines.append(f"0-0:96.7.21({rng.randrange(100):05d})")
        lines.append(f"0-0:96.7.9({rng.randrange(10):05d})")
        if variant >= 2:
            lines.append(
                "1-0:99.97.0(2)(0-0:96.7.19)(101208152415W)(0000000240*s)(101208151004W)(0000000301*s)"
            )
        else:
            lines.append("1-0:99.97.0(0)(0-0:96.7.19)")
        lines.append("1-0:32.32.0(00002)")
        lines.append("1-0:32.36.0(00000)")
        lines.append("0-0:96.13.0()")
        lines.append(f"1-0:32.7.0({rng.randrange(220, 240)}.{rng.randrange(10)}*V)")
        lines.append(f"1-0:31.7.0({rng.randrange(30):03d}*A)")
        lines.append(f"0-{channel}:24.1.0(003)")
        lines.append(f"0-{channel}:96.1.0({rng.randbytes(17).hex().upper()})")
        lines.append(f"0-{channel}:24.2.1({local_stamp(gas_time, True)})({gas_value}*m3)")
    body = "\r\n".join(lines) + "\r\n!"
    if version != "3.0":
        body += f"{crc16_arc(body.encode()):04X}"
    body += "\r\n"

    names = {
        "1-0:1.8.1": "e_use_lo_cum__kWh",
        "1-0:1.8.2": "e_use_hi_cum__kWh",
        "1-0:2.8.1": "e_ret_lo_cum__kWh",
        "1-0:2.8.2": "e_ret_hi_cum__kWh",
    }
    values = {names[r]: [t, canonical(v)] for r, v in regs.items()}
    if version == "3.0":
        gas_t = flagless_not_after(local_stamp(gas_time, False), t)
    else:
        gas_t = gas_time
        values["dsmr_version__0"] = [t, version]
    values["g_use_cum__m3"] = [gas_t, canonical(gas_value)]
    values["meter_code_str"] = [t, header]
    return body, values


def main(out_dir: str) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(20241027)
    instants = [
        datetime(2024, 1, 15, 12, 0, 0, tzinfo=timezone.utc),
        datetime(2024, 7, 1, 6, 30, 10, tzinfo=timezone.utc),
        # 02:30 local, second pass of the repeated hour
        datetime(2024, 10, 27, 1, 30, 0, tzinfo=timezone.utc),
        # 02:30 local, first pass
        datetime(2024, 10, 27, 0, 30, 0, tzinfo=timezone.utc),
        datetime(2024, 3, 31, 1, 0, 0, tzinfo=timezone.utc),
        datetime(2023, 12, 31, 23, 59, 50, tzinfo=timezone.utc),
    ]
    expected = []
    for version in ("3.0", "4.2", "5.0"):
        for i, when in enumerate(instants):
            t = int(when.timestamp())
            body, values = telegram(version, t, rng, i)
            name = f"dsmr{version.replace('.', '')}_{i + 1}.txt"
            (out / name).write_bytes(body.encode())
            expected.append(
                {"file": name, "version": version, "capture_time": t, "telegram_time": t, "values": values}
            )
    (out / "expected.json").write_text(json.dumps(expected, indent=1) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "crates/core/tests/data/p1")
