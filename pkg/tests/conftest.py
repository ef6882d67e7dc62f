import pytest

WASHING_MACHINE = """<response>I will put the dirty clothes in the washing machine</response>
<plans>
1.[manipulate] Locate the dirty clothes in the basket
2.[navigate] Navigate to the basket
3.[manipulate] Pick up the dirty clothes
4.[navigate] Navigate to the washing machine
5.[manipulate] Place the dirty clothes in the washing machine
</plans>
<actions>
[['Search','Dirty clothes'], ['Navigate','Basket'], ['Pick','Dirty clothes'], ['Navigate','Washing machine'], ['Place','Dirty clothes','Washing machine']]
</actions>"""

# Conversion-prompt counter-example: unclosed </actions>, unknown verbs, steps
# joined by a literal backslash-n.
INCORRECT_CONVERSION_BODY = (
    r"<plans>1.[Navigate] Navigate to the First Cargo Section\n2.[Find] Visually Inspect "
    r"the Cargo Straps for Tightness\n3.[Adjust] Adjust any Loose Straps\n4.[Navigate] Move "
    r"to the Next Cargo Section\n5.[Repeat] Repeat the Inspection and Adjustment Process\n6."
    r"[Continue] Continue Until All Sections are Checked</plans><actions>[['Navigate', "
    r"'First Cargo Section'], ['Find', 'Cargo Straps'], ['Adjust', 'Loose Straps'], "
    r"['Navigate', 'Next Cargo Section'], ['Repeat', 'Inspection and Adjustment Process'], "
    r"['Continue', 'All Sections']]"
)

# The same example inside a complete unified answer string (with its response).
INCORRECT_CONVERSION = (
    "<response>I will check and tighten the cargo straps section by section</response>"
    + INCORRECT_CONVERSION_BODY
)


@pytest.fixture
def washing_machine():
    return WASHING_MACHINE


@pytest.fixture
def incorrect_conversion():
    return INCORRECT_CONVERSION
