"""Index layout of the flat parameter vector shared by both kernels."""

P_M_LO, P_C_LO, P_K_LO = 0, 1, 2
P_M_SO, P_C_SO, P_K_SO = 3, 4, 5
P_KI, P_ALPHA, P_BETA = 6, 7, 8
P_CD, P_CI, P_ETA = 9, 10, 11
P_GMODE, P_GCONST = 12, 13
P_GD, P_GI, P_RHO = 14, 15, 16
P_TMODE = 17
N_PARAMS = 18

GAMMA_NONE, GAMMA_CONST, GAMMA_MODEL = 0, 1, 2
TENSION_FROZEN, TENSION_LOG = 0, 1

# exp(709.78) is the largest finite double
LOG_TENSION_MAX = 709.0
