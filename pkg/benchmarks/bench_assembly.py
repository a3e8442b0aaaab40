#!/usr/bin/env python3
"""Benchmark the compiled flow-assembly kernel against the pure-Python engine.

Usage:
    python3 benchmarks/bench_assembly.py [--packets 200000] [--flows 4000] [--repeat 3]
"""

import argparse
import time
from random import Random

from rangekit.flows.assembly import assemble_flows, kernel_available
from rangekit.flows.capture import ACK, FIN, SYN, TCP, UDP, PacketMeta


def synth_capture(n_packets: int, n_flows: int, seed: int = 1) -> list[PacketMeta]:
    """Interleaved conversations with realistic flag sequences."""
    rng = Random(seed)
    endpoints = [
        (f"10.{rng.randint(0, 3)}.{rng.randint(0, 255)}.{rng.randint(1, 254)}", rng.randint(1024, 65000))
        for _ in range(n_flows)
    ]
    servers = [("10.200.0.%d" % rng.randint(1, 200), rng.choice([80, 443, 22, 445])) for _ in range(n_flows)]
    packets = []
    ts = 0
    for i in range(n_packets):
        ts += rng.randint(1, 2000)
        flow = rng.randrange(n_flows)
        (src, sport), (dst, dport) = endpoints[flow], servers[flow]
        if rng.random() < 0.4:
            src, sport, dst, dport = dst, dport, src, sport
        proto = TCP if flow % 5 else UDP
        flags = rng.choice([ACK, ACK, ACK, SYN, FIN | ACK, 0]) if proto == TCP else None
        packets.append(PacketMeta(ts, src, dst, sport, dport, proto, rng.randint(54, 1514), flags))
    return packets


def bench(engine: str, packets, repeat: int) -> tuple[float, int]:
    best = float("inf")
    n_flows = 0
    for _ in range(repeat):
        started = time.perf_counter()
        flows = assemble_flows(packets, idle_timeout_s=120.0, engine=engine)
        best = min(best, time.perf_counter() - started)
        n_flows = len(flows)
    return best, n_flows


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--packets", type=int, default=200_000)
    parser.add_argument("--flows", type=int, default=4_000)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()

    print(f"generating {args.packets} packets across ~{args.flows} conversations ...")
    packets = synth_capture(args.packets, args.flows)

    py_time, py_flows = bench("python", packets, args.repeat)
    rate = args.packets / py_time / 1e6
    print(f"python   : {py_time:8.3f} s   {rate:6.2f} Mpkt/s   {py_flows} flows")

    if kernel_available():
        c_time, c_flows = bench("compiled", packets, args.repeat)
        rate = args.packets / c_time / 1e6
        print(f"compiled : {c_time:8.3f} s   {rate:6.2f} Mpkt/s   {c_flows} flows")
        assert c_flows == py_flows, "engines disagree on flow count"
        print(f"speedup  : {py_time / c_time:8.2f} x")
    else:
        print("compiled : kernel not built (install with Cython available)")


if __name__ == "__main__":
    main()
