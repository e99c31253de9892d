from __future__ import annotations

import pytest

from pivotrl.lexicon import load_default_lexicon
from pivotrl.rewards import RewardConfig

MINIMAL = "<think>A. <perception>P1</perception> B.</think>\\boxed{B}"

# Geometry case study: three in-think perceptions, answer B.
EXAMPLE1 = (
    "<think>Okay, let's try to solve this problem. First, let's look at the diagram. "
    "<perception>There's a circle with center C, so points A and B are on the circle, which means "
    "CA and CB are radii</perception>. The problem says BC, AC, and CD are as shown. The lengths: "
    "BC is 1 cm, AC is 1 cm, CD is 1 cm. Oh, so CA = CB = CD = 1 cm. So triangle ABC has CA = CB "
    "= 1 cm, and AB = CD. But CD is also 1 cm, so AB = 1 cm. Wait, so triangle ABC has sides CA = "
    "CB = AB = 1 cm. That makes triangle ABC equilateral. So all angles are 60 degrees. Therefore, "
    "angle ABC is 60°, which is option B.\n\n"
    "Let me double-check. <perception>The diagram clearly labels CA, CB, and CD as 1cm each, and AB "
    "is equal in length to CD</perception> The center is C, so CA and CB are radii, so CA = CB = 1 "
    "cm. CD is also 1 cm, so AB = CD = 1 cm. So triangle ABC has three sides of 1 cm, so it's "
    "equilateral. Therefore, angle ABC is 60°, which is option B. That seems right. <perception>The "
    "geometric arrangement confirms triangle ABC has all sides equal, identifying it as an "
    "equilateral triangle</perception> Maybe I'm missing something? Let me think again. The problem "
    "states AB = CD, and CD is 1 cm, so AB is 1 cm. CA and CB are both 1 cm, so triangle ABC is "
    "equilateral. So angle ABC is 60°, which is option B. So the answer should be B. Wait, but let "
    "me check the options again. Option B is 60°, so boxed B. So \\boxed{B}.</think>\n\n"
    "To solve the problem, we analyze the given diagram and information:\n\n"
    "AB is given to be equal to CD, so AB = 1 cm.\n\n"
    "In triangle ABC, CA = CB = AB = 1 cm, making triangle ABC equilateral.\n\n"
    "Thus, the measure of $\\angle ABC$ is 60°, corresponding to option B.\n\n\\boxed{B}"
)


@pytest.fixture(scope="session")
def lex():
    return load_default_lexicon()


@pytest.fixture
def cfg():
    return RewardConfig()
