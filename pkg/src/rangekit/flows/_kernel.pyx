# distutils: language = c++
# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled flow-assembly kernel.

Single-pass grouping of packed packet arrays into per-flow accumulators;
mirrors the pure-Python engine in _assembly_py.py. Endpoints arrive as
(ip << 16 | port) 48-bit integers; the unordered endpoint pair plus the
protocol forms the lookup key, while the stored initiator endpoint decides
packet direction.
"""

from cython.operator cimport dereference as deref
from libcpp.map cimport map as cppmap
from libcpp.pair cimport pair
from libcpp.vector cimport vector

ctypedef unsigned long long u64
ctypedef pair[u64, u64] keypair

cdef int FLAG_FIN = 0x01
cdef int FLAG_SYN = 0x02
cdef int FLAG_RST = 0x04
cdef int FLAG_ACK = 0x10


def assemble(long long[::1] ts,
             unsigned long long[::1] src_ep,
             unsigned long long[::1] dst_ep,
             unsigned char[::1] proto,
             long long[::1] length,
             unsigned char[::1] flags,
             long long idle_timeout_us):
    cdef Py_ssize_t n = ts.shape[0]
    cdef cppmap[keypair, long] active

    cdef vector[u64] v_init, v_resp
    cdef vector[unsigned char] v_proto
    cdef vector[long long] v_first, v_last
    cdef vector[long long] v_fwd_pkts, v_bwd_pkts, v_fwd_bytes, v_bwd_bytes
    cdef vector[long long] v_fwd_min, v_fwd_max, v_bwd_min, v_bwd_max
    cdef vector[double] v_fwd_mean, v_fwd_m2, v_bwd_mean, v_bwd_m2
    cdef vector[long long] v_last_fwd, v_last_bwd
    cdef vector[long long] v_iatf_n, v_iatb_n, v_iata_n
    cdef vector[double] v_iatf_min, v_iatf_max, v_iatf_mean, v_iatf_m2
    cdef vector[double] v_iatb_min, v_iatb_max, v_iatb_mean, v_iatb_m2
    cdef vector[double] v_iata_min, v_iata_max, v_iata_mean, v_iata_m2
    cdef vector[long long] v_syn, v_fin, v_rst, v_ack
    cdef vector[unsigned char] v_fin_fwd, v_fin_bwd, v_closed

    cdef Py_ssize_t i
    cdef u64 a, b, lo, hi
    cdef keypair key
    cdef long idx
    cdef long long t, ln
    cdef int fl
    cdef bint fwd
    cdef double dt, d
    cdef cppmap[keypair, long].iterator it

    for i in range(n):
        a = src_ep[i]
        b = dst_ep[i]
        if a < b:
            lo = a; hi = b
        else:
            lo = b; hi = a
        key = keypair((lo << 8) | proto[i], hi)
        t = ts[i]
        ln = length[i]
        fl = flags[i]

        idx = -1
        it = active.find(key)
        if it != active.end():
            idx = deref(it).second
            if v_closed[idx] or t - v_last[idx] > idle_timeout_us:
                idx = -1
        if idx < 0:
            idx = <long>v_init.size()
            active[key] = idx
            v_init.push_back(a)
            v_resp.push_back(b)
            v_proto.push_back(proto[i])
            v_first.push_back(t)
            v_last.push_back(t)
            v_fwd_pkts.push_back(0); v_bwd_pkts.push_back(0)
            v_fwd_bytes.push_back(0); v_bwd_bytes.push_back(0)
            v_fwd_min.push_back(0); v_fwd_max.push_back(0)
            v_bwd_min.push_back(0); v_bwd_max.push_back(0)
            v_fwd_mean.push_back(0.0); v_fwd_m2.push_back(0.0)
            v_bwd_mean.push_back(0.0); v_bwd_m2.push_back(0.0)
            v_last_fwd.push_back(-1); v_last_bwd.push_back(-1)
            v_iatf_n.push_back(0); v_iatb_n.push_back(0); v_iata_n.push_back(0)
            v_iatf_min.push_back(0.0); v_iatf_max.push_back(0.0)
            v_iatf_mean.push_back(0.0); v_iatf_m2.push_back(0.0)
            v_iatb_min.push_back(0.0); v_iatb_max.push_back(0.0)
            v_iatb_mean.push_back(0.0); v_iatb_m2.push_back(0.0)
            v_iata_min.push_back(0.0); v_iata_max.push_back(0.0)
            v_iata_mean.push_back(0.0); v_iata_m2.push_back(0.0)
            v_syn.push_back(0); v_fin.push_back(0); v_rst.push_back(0); v_ack.push_back(0)
            v_fin_fwd.push_back(0); v_fin_bwd.push_back(0); v_closed.push_back(0)

        fwd = (a == v_init[idx])

        # combined inter-arrival, then advance the flow clock
        if v_fwd_pkts[idx] + v_bwd_pkts[idx] > 0:
            dt = <double>(t - v_last[idx]) / 1e6
            if v_iata_n[idx] == 0:
                v_iata_min[idx] = dt; v_iata_max[idx] = dt
            else:
                if dt < v_iata_min[idx]: v_iata_min[idx] = dt
                if dt > v_iata_max[idx]: v_iata_max[idx] = dt
            v_iata_n[idx] += 1
            d = dt - v_iata_mean[idx]
            v_iata_mean[idx] += d / v_iata_n[idx]
            v_iata_m2[idx] += d * (dt - v_iata_mean[idx])
        v_last[idx] = t

        if fwd:
            if v_fwd_pkts[idx] == 0:
                v_fwd_min[idx] = ln; v_fwd_max[idx] = ln
            else:
                if ln < v_fwd_min[idx]: v_fwd_min[idx] = ln
                if ln > v_fwd_max[idx]: v_fwd_max[idx] = ln
                dt = <double>(t - v_last_fwd[idx]) / 1e6
                if v_iatf_n[idx] == 0:
                    v_iatf_min[idx] = dt; v_iatf_max[idx] = dt
                else:
                    if dt < v_iatf_min[idx]: v_iatf_min[idx] = dt
                    if dt > v_iatf_max[idx]: v_iatf_max[idx] = dt
                v_iatf_n[idx] += 1
                d = dt - v_iatf_mean[idx]
                v_iatf_mean[idx] += d / v_iatf_n[idx]
                v_iatf_m2[idx] += d * (dt - v_iatf_mean[idx])
            v_fwd_pkts[idx] += 1
            v_fwd_bytes[idx] += ln
            d = <double>ln - v_fwd_mean[idx]
            v_fwd_mean[idx] += d / v_fwd_pkts[idx]
            v_fwd_m2[idx] += d * (<double>ln - v_fwd_mean[idx])
            v_last_fwd[idx] = t
        else:
            if v_bwd_pkts[idx] == 0:
                v_bwd_min[idx] = ln; v_bwd_max[idx] = ln
            else:
                if ln < v_bwd_min[idx]: v_bwd_min[idx] = ln
                if ln > v_bwd_max[idx]: v_bwd_max[idx] = ln
                dt = <double>(t - v_last_bwd[idx]) / 1e6
                if v_iatb_n[idx] == 0:
                    v_iatb_min[idx] = dt; v_iatb_max[idx] = dt
                else:
                    if dt < v_iatb_min[idx]: v_iatb_min[idx] = dt
                    if dt > v_iatb_max[idx]: v_iatb_max[idx] = dt
                v_iatb_n[idx] += 1
                d = dt - v_iatb_mean[idx]
                v_iatb_mean[idx] += d / v_iatb_n[idx]
                v_iatb_m2[idx] += d * (dt - v_iatb_mean[idx])
            v_bwd_pkts[idx] += 1
            v_bwd_bytes[idx] += ln
            d = <double>ln - v_bwd_mean[idx]
            v_bwd_mean[idx] += d / v_bwd_pkts[idx]
            v_bwd_m2[idx] += d * (<double>ln - v_bwd_mean[idx])
            v_last_bwd[idx] = t

        if fl != 0:
            if fl & FLAG_SYN:
                v_syn[idx] += 1
            if fl & FLAG_FIN:
                v_fin[idx] += 1
                if fwd:
                    v_fin_fwd[idx] = 1
                else:
                    v_fin_bwd[idx] = 1
            if fl & FLAG_RST:
                v_rst[idx] += 1
            if fl & FLAG_ACK:
                v_ack[idx] += 1
            if (fl & FLAG_RST) or (v_fin_fwd[idx] and v_fin_bwd[idx]):
                v_closed[idx] = 1

    cdef list rows = []
    cdef Py_ssize_t j
    for j in range(<Py_ssize_t>v_init.size()):
        rows.append((
            v_init[j], v_resp[j], v_proto[j], v_first[j], v_last[j],
            v_fwd_pkts[j], v_bwd_pkts[j], v_fwd_bytes[j], v_bwd_bytes[j],
            v_fwd_min[j], v_fwd_max[j], v_fwd_mean[j], v_fwd_m2[j],
            v_bwd_min[j], v_bwd_max[j], v_bwd_mean[j], v_bwd_m2[j],
            v_iatf_n[j], v_iatf_min[j], v_iatf_max[j], v_iatf_mean[j], v_iatf_m2[j],
            v_iatb_n[j], v_iatb_min[j], v_iatb_max[j], v_iatb_mean[j], v_iatb_m2[j],
            v_iata_n[j], v_iata_min[j], v_iata_max[j], v_iata_mean[j], v_iata_m2[j],
            v_syn[j], v_fin[j], v_rst[j], v_ack[j],
        ))
    return rows
