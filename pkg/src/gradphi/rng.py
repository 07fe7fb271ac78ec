"""Counter-based noise for reproducible parallel Monte Carlo.

Every Brownian increment is addressed by (master seed, step index, site
index, stream) through a stateless Philox4x32-10 block cipher, so a given
increment is the same number no matter which worker asks for it, in which
order, or inside which simulation box.  This is what lets overlapping
corrector boxes share their driving noise and makes replica scheduling
irrelevant to the output.
"""

import numpy as np

__all__ = ["philox_normal", "philox_normal_block", "NoiseStream",
           "BulkNormals"]

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)

# step indices are signed (burn-in lives at negative times); shift them into
# uint64 range before splitting across two counter words
_STEP_OFFSET = np.int64(1) << np.int64(62)


_SHIFT32 = np.uint64(32)


def _philox4x32(c0, c1, c2, c3, k0, k1):
    """One Philox4x32-10 block per lane; inputs are uint64 arrays holding
    32-bit values (clobbered). Returns four uint32-valued uint64 arrays.

    Buffers rotate in place (one scratch array), which matters: the noise
    path is a measured hot spot and temporaries double its cost."""
    s = np.empty_like(c0)
    for _ in range(10):
        np.multiply(_M0, c0, out=s)       # s = p0; c0 value now free
        np.multiply(_M1, c2, out=c0)      # c0 = p1; c2 value now free
        np.right_shift(c0, _SHIFT32, out=c2)
        np.bitwise_xor(c2, c1, out=c2)
        np.bitwise_xor(c2, k0, out=c2)    # c2 holds NEW c0
        np.bitwise_and(c0, _MASK32, out=c1)   # NEW c1 (old c1 consumed)
        np.right_shift(s, _SHIFT32, out=c0)
        np.bitwise_xor(c0, c3, out=c0)
        np.bitwise_xor(c0, k1, out=c0)    # c0 holds NEW c2
        np.bitwise_and(s, _MASK32, out=c3)    # NEW c3
        c0, c2 = c2, c0                   # relabel storages
        np.add(k0, _W0, out=k0)
        np.bitwise_and(k0, _MASK32, out=k0)
        np.add(k1, _W1, out=k1)
        np.bitwise_and(k1, _MASK32, out=k1)
    return c0, c1, c2, c3


def _to_unit(hi, lo):
    # 53 uniform bits from two 32-bit words, mapped strictly inside (0,1)
    v = ((hi >> np.uint64(5)) << np.uint64(26)) | (lo >> np.uint64(6))
    return (v.astype(np.float64) + 0.5) * (2.0 ** -53)


def _normal_lanes(seed, steps_u64, sites):
    c0 = steps_u64 & _MASK32
    c1 = steps_u64 >> np.uint64(32)
    c2 = sites & _MASK32
    c3 = sites >> np.uint64(32)
    seed = np.uint64(seed)
    shape = np.broadcast_shapes(c0.shape, c2.shape)
    k0 = np.full(shape, seed & _MASK32, dtype=np.uint64)
    k1 = np.full(shape, seed >> np.uint64(32), dtype=np.uint64)
    o0, o1, o2, o3 = _philox4x32(
        np.broadcast_to(c0, shape).copy(), np.broadcast_to(c1, shape).copy(),
        np.broadcast_to(c2, shape).copy(), np.broadcast_to(c3, shape).copy(),
        k0, k1)
    u1 = _to_unit(o0, o1)
    u2 = _to_unit(o2, o3)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def philox_normal(seed, step, sites, stream=0):
    """Standard normal draws addressed by (seed, step, site, stream).

    seed : int (64-bit master seed)
    step : int, may be negative (burn-in steps)
    sites : int array of site indices (any shape)
    stream : small int to separate independent noise channels
    """
    sites = np.asarray(sites, dtype=np.uint64)
    sites = sites ^ (np.uint64(stream) << np.uint64(48))
    k = np.asarray(np.uint64(np.int64(step) + _STEP_OFFSET))
    return _normal_lanes(seed, k, sites)


def philox_normal_block(seed, step0, nsteps, sites, stream=0):
    """(nsteps, len(sites)) block of standard normals; row j holds step
    step0 + j.  Identical numbers to per-step philox_normal calls.

    Internally the block is generated in cache-sized batches: the round
    function touches seven lane-sized uint64 buffers, so letting them
    spill to DRAM costs ~5x."""
    sites = np.asarray(sites, dtype=np.uint64).ravel()
    sites = sites ^ (np.uint64(stream) << np.uint64(48))
    out = np.empty((nsteps, sites.size))
    batch = max(1, 16384 // max(sites.size, 1))
    j = 0
    while j < nsteps:
        b = min(batch, nsteps - j)
        steps = (np.arange(np.int64(step0 + j), np.int64(step0 + j + b),
                           dtype=np.int64) + _STEP_OFFSET).astype(np.uint64)
        out[j:j + b] = _normal_lanes(seed, steps[:, None], sites[None, :])
        j += b
    return out


class BulkNormals:
    """Sequential high-throughput normal stream for burn-in phases.

    Burn-in approximates the stationary start and is consumed by exactly
    one sequential reader, so it does not need per-(step, site)
    addressing; numpy's native Philox generator is several times faster
    than the addressable path.  The stream is keyed by (seed, stream,
    tag) and its output is independent of how draws are blocked.
    """

    def __init__(self, seed, stream=0, tag=0xB1):
        key = [np.uint64(seed), np.uint64((int(stream) << 8) | tag)]
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def block(self, nsteps, nsites):
        return self._gen.standard_normal((nsteps, nsites))


class NoiseStream:
    """Deterministic Brownian increments for one lattice simulation.

    increment(k) returns the raw increments sqrt(dt)*xi(k, x) for every
    site; projected(k) subtracts the spatial mean (the mean-zero noise
    driving the stationary dynamics).  Addressing is by the *global* site
    index of the underlying torus, so a stream restricted to a sub-box
    (``sites`` argument) reproduces the same numbers the full-torus stream
    would produce at those sites.
    """

    def __init__(self, master_seed, grid, dt, sites=None, stream=0):
        self.master_seed = int(master_seed)
        self.grid = grid
        self.dt = float(dt)
        self.stream = int(stream)
        if sites is None:
            sites = np.arange(grid.nsites, dtype=np.uint64)
        self.sites = np.asarray(sites, dtype=np.uint64)
        self._sqrt_dt = np.sqrt(self.dt)

    def increment(self, k):
        return self._sqrt_dt * philox_normal(
            self.master_seed, k, self.sites, self.stream
        )

    def projected(self, k):
        xi = self.increment(k)
        return xi - xi.mean()

    def increment_block(self, k0, nsteps):
        """(nsteps, nsites) block of raw increments for steps k0..k0+nsteps-1."""
        return self._sqrt_dt * philox_normal_block(
            self.master_seed, k0, nsteps, self.sites, self.stream)

    def projected_block(self, k0, nsteps):
        blk = self.increment_block(k0, nsteps)
        blk -= blk.mean(axis=1, keepdims=True)
        return blk
