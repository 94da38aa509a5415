# Cost-model sanity check: the default latencies come from microbenchmarks
# on a 912 MHz Cortex-A7 class board.  Multiplying each latency by a single
# clock frequency must reproduce the measured cycle counts; this prints the
# consistency report and the clock implied by the (time, cycle) table.

from hvsim import CostModel, implied_clock_mhz, validate_cost_model

clock = implied_clock_mhz()
print(f"implied clock from the measured table: {clock:.3f} MHz\n")

report = validate_cost_model(CostModel(), clock)
print(report)
print(f"\nmax deviation from measured cycles: {report.max_reference_deviation():.5%}")
print(f"consistent within 0.1%: {report.consistent(0.001)}")

print("\nwith a deliberately wrong clock the table stops agreeing:")
bad = validate_cost_model(CostModel(), 500.0)
print(f"  at 500 MHz the max deviation is {bad.max_reference_deviation():.2%}")
