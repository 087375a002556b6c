"""dexdesk: desk-scale generative dexterous control.

Library layout:

- ``poses``       rigid transforms, 6D rotation codec, chunk/horizon encodings
- ``hands``       coupled kinematic hand models, forward kinematics, model files
- ``retarget``    keyvector energy and the hand-pose retargeting solver
- ``diffusion``   noise schedules, diffusion loss, DDIM sampling
- ``denoiser``    reference fully-connected denoiser with hand-written backprop
- ``optim``       AdamW with linear warmup and cosine decay
- ``policy``      normalization, conditioning, training samples, chunk inference
- ``bundle``      byte-stable checkpoint / policy-bundle files
- ``scheduler``   timestamped action playback with replan triggering
- ``episodes``    on-disk episode store
- ``protocol``    labeling, curation, manifest, subset sampling, reset scenes
- ``sim``         deterministic planar manipulation world
- ``oracle``      scripted demonstrators and rollout controllers
- ``service``     teleoperation session state machine and wire codec
- ``server``      FastAPI app exposing the service
- ``experiments`` collect / train / evaluate / suite harness
- ``cli``         command-line verbs
"""

__version__ = "0.1.0"
