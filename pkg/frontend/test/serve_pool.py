"""Serve a 20-sample pool in human mode for the UI integration test.

Prints ``PORT <n>`` once the service is up, runs the annotation loop, then
writes the committed labels to the path given as argv[1], prints ``DONE``
and lingers briefly so clients can observe the terminal progress flag.
"""

import json
import sys
import time
from pathlib import Path

import numpy as np

from alpool.annotate import LabelQueue
from alpool.core import ExperimentConfig, Pool, Sample
from alpool.dataio import SyntheticSpec, generate_synthetic
from alpool.loop import ExperimentRunner
from alpool.service import start_service


def main():
    out_path = Path(sys.argv[1])
    spec = SyntheticSpec(class_count=4, feature_dim=6, samples_per_class=5, seed=1)
    features, labels, _ = generate_synthetic(spec)
    samples = [
        Sample(id=f"s{i:04d}", features=features[i].astype(np.float64),
               true_label=int(labels[i]))
        for i in range(20)
    ]
    pool = Pool(samples, class_count=4)
    eval_spec = SyntheticSpec(class_count=4, feature_dim=6, samples_per_class=10, seed=2)
    eval_X, eval_y, _ = generate_synthetic(eval_spec)

    queue = LabelQueue(class_count=4)
    config = ExperimentConfig(
        strategy="entropy", initializer="random", init_fraction=0.05,
        budget=4, iterations=2, seed=0, hidden_width=4, epochs=10,
        annotator_mode="human",
    )
    runner = ExperimentRunner(
        config, pool, eval_X.astype(np.float64), eval_y,
        queue=queue, label_timeout=120.0,
    )
    server = start_service(queue, runner.progress, port=0)
    print(f"PORT {server.server_address[1]}", flush=True)
    try:
        runner.run()
        committed = {}
        for sample_id, record in sorted(pool.labeled.items()):
            committed[sample_id] = {
                "hard": record.hard,
                "votes": [list(v) for v in record.votes] if record.votes else None,
                "annotator_ids": list(record.annotator_ids or []),
            }
        out_path.write_text(json.dumps(committed, indent=2))
        print("DONE", flush=True)
        time.sleep(8)  # let the client observe terminal progress
    finally:
        server.shutdown()


if __name__ == "__main__":
    main()
