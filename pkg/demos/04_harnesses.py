"""The ablation and timing harnesses.

Sweeps mixing-layer configurations (how many parallel k levels, which k
families) on a small synthetic benchmark, then times sequential
per-graph forwards against one merged batch pass over forty 10 ms
graphs.
"""

from eventmixer import ModelConfig, TrainConfig, ablate_ccm, bench_timing, init_model
from eventmixer.events import MotionSpec, SceneConfig, SceneObject, SensorGeometry, synth_scene, window_events
from eventmixer.graph import build_graph
from eventmixer.training import K_SET_SERIES, ablation_table

geometry = SensorGeometry(346, 260)
scene = SceneConfig(
    geometry=geometry,
    duration_ms=500.0,
    event_rate=2000.0,
    noise_rate=0.0,
    motion=MotionSpec("rotational", speed=0.5),
    objects=(
        SceneObject("disc", 1, (110, 130), radius=36),
        SceneObject("rect", 2, (235, 130), size=(70, 50)),
    ),
)
events = synth_scene(scene, seed=5)

# --- ablation: layer counts 1..4 and two alternative k families -------------
graphs = [build_graph(w, geometry) for w in window_events(events, 100_000, 10_000) if len(w)]
base = ModelConfig(n_classes=3, widths=(8, 12, 16, 20), k_set=(2, 3), seed=0)
rows = ablate_ccm(
    base,
    graphs,
    layer_counts=[1, 2, 3, 4],
    k_sets={"set-1": K_SET_SERIES["set-1"], "set-3": K_SET_SERIES["set-3"]},
    train_cfg=TrainConfig(iterations=20, seed=0),
)
print(ablation_table(rows))

# --- timing: 40 graphs of 10 ms, sequential vs one merged pass --------------
small = [build_graph(w, geometry) for w in window_events(events, 10_000, 10_000) if len(w)][:40]
model = init_model(ModelConfig(n_classes=3, widths=(8, 12, 16, 20), k_set=(4, 8), seed=0))
report = bench_timing(model, small, repeats=5, warmup=1)
print(report.to_text())
speedup = report.sequential_mean / report.batch_mean
print(f"grouping the forward passes is {speedup:.1f}x faster per graph here")
