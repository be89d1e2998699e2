"""Project-wide constants: keypoint layout, experiment presets and exit codes."""

# OpenPose-style 18 keypoint ordering, shared by synthetic skeletons and pose JSON files
KEYPOINT_NAMES = {
    0: 'nose',
    1: 'neck',
    2: 'right_shoulder',
    3: 'right_elbow',
    4: 'right_wrist',
    5: 'left_shoulder',
    6: 'left_elbow',
    7: 'left_wrist',
    8: 'right_hip',
    9: 'right_knee',
    10: 'right_ankle',
    11: 'left_hip',
    12: 'left_knee',
    13: 'left_ankle',
    14: 'right_eye',
    15: 'left_eye',
    16: 'right_ear',
    17: 'left_ear',
}
NUM_KEYPOINTS = len(KEYPOINT_NAMES)

# shoulders and hips span the masked upper-body box
TORSO_KEYPOINTS = (2, 5, 8, 11)

# sample counts compared in the sampling-number sweep
K_SWEEP = [1, 2, 4, 6, 8]

# modular ablation presets: cumulative additions on top of a single-flow baseline
ABLATION_PRESETS = {
    'baseline': {'cascade': False, 'shallow_codec': False, 'samples': 1},
    'cascade': {'cascade': True, 'shallow_codec': False, 'samples': 1},
    'shallow': {'cascade': True, 'shallow_codec': True, 'samples': 1},
    'dafn': {'cascade': True, 'shallow_codec': True, 'samples': 6},
}

MASK_FILL = 0.5
PSNR_CAP_DB = 99.0

EXIT_OK = 0
EXIT_VERIFICATION_FAILED = 1
EXIT_USAGE = 2
