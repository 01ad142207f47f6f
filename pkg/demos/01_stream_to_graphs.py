"""From an event stream to normalized 3D graphs.

Synthesizes a labeled two-object scene, slices it into 100 ms windows,
normalizes each window into a unit-cube graph, and inspects the kNN
index maps and farthest-point samples that the network consumes.
"""

import numpy as np

from eventmixer import (
    MotionSpec,
    SceneConfig,
    SceneObject,
    SensorGeometry,
    build_graph,
    farthest_point_sample,
    invert_index_map,
    knn_pyramid,
    synth_scene,
    window_events,
)

geometry = SensorGeometry(346, 260)
scene = SceneConfig(
    geometry=geometry,
    duration_ms=600.0,
    event_rate=3000.0,
    noise_rate=150.0,
    motion=MotionSpec("rotational", speed=0.6),
    objects=(
        SceneObject("disc", 1, (110, 130), radius=40),
        SceneObject("rect", 2, (240, 130), size=(70, 50)),
    ),
)

events = synth_scene(scene, seed=3)
print(f"synthesized {len(events)} events over {scene.duration_ms:.0f} ms")
labels = np.array([e.label for e in events])
for cls in np.unique(labels):
    print(f"  class {cls}: {np.sum(labels == cls)} events")

# tumbling 100 ms windows, at most 10000 events kept per window
windows = window_events(events, duration_us=100_000, n_max=10_000)
print(f"\n{len(windows)} windows:", [len(w) for w in windows])

graph = build_graph(windows[0], geometry)
print(f"\nwindow 0 -> graph with {len(graph)} nodes")
print("positions are [x/X, y/Y, (t-t0)/T], all inside the unit cube:")
print("  min:", graph.positions.min(axis=0).round(3))
print("  max:", graph.positions.max(axis=0).round(3))

# the mixing layer reads neighborhoods at several k in parallel;
# smaller-k rows are prefixes of larger-k rows
pyramid = knn_pyramid(graph, (4, 8, 16))
row = 0
for level in pyramid.levels:
    print(f"k={level.k:>2} neighbors of node {row}:", level.rows[row][:8], "...")

# the inverse map drives inter-set mixing and upsampling
inverse = invert_index_map(pyramid.levels[-1], len(graph))
counts = inverse.counts()
print(f"\ninverse map: node appears in {counts.mean():.1f} sets on average "
      f"(min {counts.min()}, max {counts.max()})")

# transition-down keeps a well-spread quarter of the nodes
sample = farthest_point_sample(graph, max(1, len(graph) // 4))
print(f"\nfarthest point sampling keeps {len(sample)} of {len(graph)} nodes")
print("first picks:", sample[:10])
