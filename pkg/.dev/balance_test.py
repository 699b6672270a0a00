import sys, json
sys.path.insert(0, "/root/pkg/.dev")
from tuning_matrix import run

run("F1_balanced", seed=0)
run("F2_bal_dmem2_dis2", seed=0, lam_dmem=2.0, lam_dis=2.0)
run("F1_balanced_s1", seed=1)
run("F2_bal_dmem2_dis2_s1", seed=1, lam_dmem=2.0, lam_dis=2.0)
