import sys
sys.path.insert(0, "/root/pkg/.dev")
import tuning_matrix_lib as lib

lib.run("G1_mscale_default", seed=0)
lib.run("G2_mscale_dmem2", seed=0, lam_dmem=2.0)
lib.run("G3_mscale_dmem2_dis2", seed=0, lam_dmem=2.0, lam_dis=2.0)
