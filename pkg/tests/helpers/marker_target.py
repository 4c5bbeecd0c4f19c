"""Instrumented child program for marker mode tests.

Walks two named regions on four cores, one pass each, reading whatever
counters the parent programmed.  Thread ids are simulated: the regions
are entered sequentially with explicit core ids, which is equivalent to
four pinned threads as far as the result file is concerned.
"""

from corekit import marker


def main():
    marker.marker_init(4, 2)
    init = marker.register_region("Init")
    bench = marker.register_region("Benchmark")
    for region in (init, bench):
        for tid in range(4):
            marker.start_region(tid, tid)
            marker.stop_region(tid, tid, region)
    marker.marker_close()


if __name__ == "__main__":
    main()
