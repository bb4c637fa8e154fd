"""Baseline regressors: least squares, extra-trees and leaf-wise gradient boosting."""
from .direct import (DirectMultiStep, GridSearchResult, Learner, expand_grid, fit_direct_multistep, grid_search,
                     learner_fit_predict, model_from_dict, model_to_json, step_seed)
from .extra_trees import EtModel, EtParams, fit_extra_trees
from .gbm import GbmModel, GbmParams, SortedDesign, fit_gbm, grow_tree
from .linear import LinearModel, fit_linear
from .tree import Tree
