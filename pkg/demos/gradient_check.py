"""
Checking the hand-written backward pass
=======================================

Central differences against the analytic gradient on a 22-token instance
that exercises every label family. The worst relative error is reported per
parameter family.
"""

from gesa.corpus import build_vocab
from gesa.model import prepare_example
from gesa.train import grad_check, gradcheck_config, gradcheck_instance, random_params

config = gradcheck_config()
inst = gradcheck_instance()
vocab = build_vocab([inst])
example = prepare_example(inst, vocab, config)
params = random_params(config, len(vocab), seed=0)

result = grad_check(params, example, config, eps=1e-5, n_samples=200)
for family, err in sorted(result.per_family.items(), key=lambda kv: -kv[1]):
    print(f"{family:<24} {err:.2e}")
print(f"max relative error {result.max_rel_error:.2e} over {result.n_coords} coordinates")
