"""Generator / Evaluator / PaymentNet auction mechanism and its training procedures."""
from .mechanism import BatchOutcome, CGAMechanism
from .model import (AuctionBatch, CGAConfig, CGAModel, EncoderOutput, EvaluatorOutput, GenerationTrace,
                    PaymentInputs, alloc_probs, encode, evaluator_forward, generate, payment_inputs,
                    paymentnet_forward, self_exclusion_bids)
from .regret import (DEFAULT_GRID, MisreportCache, RegretResult, build_misreport_cache, empirical_regret,
                     regret_from_rates)
from .training import (VARIANTS, TrainSettings, TrainState, Variant, compute_rewards, end2end_train,
                       evaluator_train, generator_train, paymentnet_train, train_cga)

__all__ = [
    "CGAConfig", "CGAModel", "AuctionBatch", "EncoderOutput", "GenerationTrace", "EvaluatorOutput",
    "PaymentInputs", "encode", "alloc_probs", "generate", "evaluator_forward", "paymentnet_forward",
    "payment_inputs", "self_exclusion_bids", "DEFAULT_GRID", "RegretResult", "MisreportCache",
    "empirical_regret", "build_misreport_cache", "regret_from_rates", "Variant", "VARIANTS",
    "TrainState", "TrainSettings", "compute_rewards", "evaluator_train", "generator_train",
    "paymentnet_train", "end2end_train", "train_cga", "CGAMechanism", "BatchOutcome",
]
