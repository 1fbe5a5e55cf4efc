"""
Graph labels versus local entity attention
==========================================

On the two-hop task the cue and the answer never share a sentence: a bridge
entity does, and its second mention is linked by a MATCH edge. With
LOCAL_E2E the entity block loses the graph and sees only window labels over
entity order.
"""

import threadpoolctl

from gesa.model import ModelConfig
from gesa.synthetic import gen_synthetic_dataset
from gesa.train import TrainConfig, run_ablation

threadpoolctl.threadpool_limits(1)

train_set = gen_synthetic_dataset(2000, 4, 6, hops=2, seed=0)
dev_set = gen_synthetic_dataset(200, 4, 6, hops=2, seed=1)

rows = run_ablation(["LOCAL_E2E"], ModelConfig(dtype="float32"), TrainConfig(epochs=6),
                    train_set, dev_set, seeds=(0,))
for row in rows:
    print(f"{row['spec']:<10} labels={row['label_vocab_size']:>2}  accuracy {row['accuracy']:.3f}  "
          f"delta {row['delta_accuracy']:+.3f}")
