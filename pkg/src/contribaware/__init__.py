"""Contributor-aware ensembles as a defense against backdoor poisoning."""

from .attack import AdversaryProfile, Placement, TriggerSpec, apply_trigger, make_adversarial_testset, poison_contribution
from .data import ContributorPartition, LabeledDataset, SyntheticSpec, gen_synthetic, load_idx, partition_contributors
from .ensemble import Ensemble, collect_votes, ensemble_predict, train_contributor_ensemble
from .evaluation import accuracy, attack_success_rate, confusion_matrix, mean_ci
from .lfc import VoteMatrix, VoterWeights, estimate_voter_weights, majority_vote, weighted_majority_vote
from .nn import ClassifierArch, ClassifierParams, ConvLayer, SgdHyper, forward, loss_and_grad, predict, sgd_step
from .training import SslHyper, train_ssl, train_supervised

__version__ = "0.1.0"
