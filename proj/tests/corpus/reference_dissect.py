#!/usr/bin/env python3
"""Reference dissection of the golden corpus using dpkt, an implementation
independent from the C++ dissector. Writes <capture>.reference.csv next to
each capture with columns: index,src,dst,transport,src_port,dst_port.

Usage: python3 reference_dissect.py   (run from any directory)
"""

import csv
import glob
import os
import socket

import dpkt

HERE = os.path.dirname(os.path.abspath(__file__))

TRANSPORTS = ((dpkt.tcp.TCP, "tcp"), (dpkt.udp.UDP, "udp"),
              (dpkt.icmp.ICMP, "icmp"), (dpkt.icmp6.ICMP6, "icmpv6"))


def network_layer(linktype, buf):
    if linktype == dpkt.pcap.DLT_EN10MB:
        frame = dpkt.ethernet.Ethernet(buf)
        return frame.data
    if linktype == dpkt.pcap.DLT_LINUX_SLL:
        return dpkt.sll.SLL(buf).data
    if linktype == 101:  # LINKTYPE_RAW
        version = buf[0] >> 4
        if version == 4:
            return dpkt.ip.IP(buf)
        if version == 6:
            return dpkt.ip6.IP6(buf)
    return None


def transport_of(ip):
    for cls, name in TRANSPORTS:
        if isinstance(ip.data, cls):
            return name, ip.data
    if isinstance(ip, dpkt.ip.IP):
        if ip.offset != 0:
            return "none", None
        return "other", None
    frag = ip.extension_hdrs.get(44)
    if frag is not None and frag.frag_off > 0:
        return "none", None
    if getattr(ip, "p", ip.nxt) == 59:
        return "none", None
    return "other", None


def dissect(linktype, buf):
    try:
        ip = network_layer(linktype, buf)
    except (dpkt.UnpackError, dpkt.NeedData, IndexError):
        ip = None
    if isinstance(ip, dpkt.ip.IP):
        family = socket.AF_INET
    elif isinstance(ip, dpkt.ip6.IP6):
        family = socket.AF_INET6
    else:
        return "", "", "none", "", ""
    src = socket.inet_ntop(family, ip.src)
    dst = socket.inet_ntop(family, ip.dst)
    transport, layer = transport_of(ip)
    if transport in ("tcp", "udp"):
        return src, dst, transport, str(layer.sport), str(layer.dport)
    return src, dst, transport, "", ""


def main():
    for path in sorted(glob.glob(os.path.join(HERE, "*.pcap"))):
        with open(path, "rb") as f:
            reader = dpkt.pcap.Reader(f)
            linktype = reader.datalink()
            rows = [(i,) + dissect(linktype, buf) for i, (_, buf) in enumerate(reader)]
        out = path[: -len(".pcap")] + ".reference.csv"
        with open(out, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["index", "src", "dst", "transport", "src_port", "dst_port"])
            w.writerows(rows)


if __name__ == "__main__":
    main()
