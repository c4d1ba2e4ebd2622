//! Natural-language serialization of one subject.

use crate::dataset::{columns, FeatureSchema, Label, SubjectRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SerializedRole {
    /// In-context example; the diagnosis is stated.
    IclWithLabel,
    /// Lone target of a zero-shot prompt.
    ZeroShotTarget,
    /// Final, unlabeled record of a few-shot prompt.
    FewShotTarget,
}

struct Pronouns {
    noun: &'static str,
    subject_cap: &'static str,
    subject: &'static str,
    possessive: &'static str,
}

const FEMALE: Pronouns = Pronouns {
    noun: "woman",
    subject_cap: "She",
    subject: "she",
    possessive: "her",
};

const MALE: Pronouns = Pronouns {
    noun: "man",
    subject_cap: "He",
    subject: "he",
    possessive: "his",
};

struct Cells<'a> {
    schema: &'a FeatureSchema,
    subject: &'a SubjectRecord,
}

impl<'a> Cells<'a> {
    fn raw(&self, name: &str) -> Result<&'a str> {
        let i = self
            .schema
            .index_of(name)
            .ok_or_else(|| Error::Render(format!("schema has no {name} column")))?;
        let v = self
            .subject
            .values
            .get(i)
            .ok_or_else(|| Error::Render(format!("subject {} lacks {name}", self.subject.subject_id)))?;
        if v.missing {
            return Err(Error::Render(format!(
                "subject {} is missing {name}",
                self.subject.subject_id
            )));
        }
        Ok(&v.raw_text)
    }

    /// `"<phrase> of <value>[ <unit>]"` for a measured feature.
    fn measure(&self, name: &str) -> Result<String> {
        let spec = &self.schema.features()[self
            .schema
            .index_of(name)
            .ok_or_else(|| Error::Render(format!("schema has no {name} column")))?];
        let value = self.raw(name)?;
        Ok(match &spec.unit {
            Some(unit) => format!("{} of {value} {unit}", spec.phrase),
            None => format!("{} of {value}", spec.phrase),
        })
    }
}

pub fn render_serialized(
    schema: &FeatureSchema,
    subject: &SubjectRecord,
    role: SerializedRole,
) -> Result<String> {
    use columns::*;
    let c = Cells { schema, subject };
    let p = match c.raw(GENDER)? {
        "Female" => &FEMALE,
        "Male" => &MALE,
        other => {
            return Err(Error::Render(format!(
                "unknown {GENDER} value {other:?} for subject {}",
                subject.subject_id
            )))
        }
    };
    let diagnosis = match role {
        SerializedRole::IclWithLabel => match subject.label {
            Some(Label::Ad) => " and is diagnosed with Alzheimer's disease.",
            Some(Label::Cn) => " and is not diagnosed with Alzheimer's disease.",
            None => {
                return Err(Error::Render(format!(
                    "example subject {} has no label",
                    subject.subject_id
                )))
            }
        },
        SerializedRole::ZeroShotTarget => ".",
        SerializedRole::FewShotTarget => ", predict their diagnosis.",
    };
    let copies = c.raw(APOE4)?;
    let copy_noun = if copies == "1" { "copy" } else { "copies" };
    let verb = if role == SerializedRole::ZeroShotTarget {
        "show"
    } else {
        "shows"
    };
    let apoe_phrase = &schema.features()[schema.index_of(APOE4).unwrap()].phrase;

    Ok(format!(
        "A {age}-year-old {noun} arrives for Alzheimer's Disease (AD) diagnosis{diagnosis} \
         {S} has received {edu} years of education, and {s} carries {copies} {copy_noun} of the {apoe_phrase}. \
         {S} received clinical examinations including cerebrospinal fluid (CSF) analysis, positron emission tomography (PET) imaging, and brain magnetic resonance imaging (MRI) imaging. \
         For beta-amyloid pathology, {s} has an {av45} and a {abeta}. \
         For tau pathology, {s} has a {tau} and a {ptau}. \
         For MRI neuroimaging scans, {s} has {wb}, {hc}, {ent}, {ven}, {mt}, and {fus}. \
         In addition, {poss} fluorodeoxyglucose (FDG) PET scan {verb} an {fdg}.",
        age = c.raw(AGE)?,
        noun = p.noun,
        S = p.subject_cap,
        s = p.subject,
        poss = p.possessive,
        edu = c.raw(EDUCATION)?,
        av45 = c.measure(AV45)?,
        abeta = c.measure(CSF_ABETA)?,
        tau = c.measure(CSF_TAU)?,
        ptau = c.measure(CSF_PTAU)?,
        wb = c.measure(WHOLE_BRAIN)?,
        hc = c.measure(HIPPOCAMPUS)?,
        ent = c.measure(ENTORHINAL)?,
        ven = c.measure(VENTRICLES)?,
        mt = c.measure(MID_TEMP)?,
        fus = c.measure(FUSIFORM)?,
        fdg = c.measure(FDG)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    #[test]
    fn pronouns_follow_gender() {
        let d = synthetic::generate(20, 0, 4).unwrap();
        let g = d.schema().index_of(columns::GENDER).unwrap();
        for s in d.subjects() {
            let text = render_serialized(d.schema(), s, SerializedRole::IclWithLabel).unwrap();
            if s.values[g].raw_text == "Female" {
                assert!(text.contains("-year-old woman") && text.contains(", and she carries"));
                assert!(!text.contains(" he ") && !text.contains(" his "));
            } else {
                assert!(text.contains("-year-old man") && text.contains("In addition, his"));
                assert!(!text.contains(" she ") && !text.contains(" her "));
            }
            assert!(text.contains("is not diagnosed with Alzheimer's disease."));
        }
    }

    #[test]
    fn unknown_gender_is_render_error() {
        let d = synthetic::generate(1, 0, 4).unwrap();
        let mut s = d.subjects()[0].clone();
        let g = d.schema().index_of(columns::GENDER).unwrap();
        s.values[g].raw_text = "Unknown".into();
        assert!(matches!(
            render_serialized(d.schema(), &s, SerializedRole::ZeroShotTarget),
            Err(Error::Render(_))
        ));
    }

    #[test]
    fn example_role_requires_label() {
        let d = synthetic::generate(1, 0, 4).unwrap();
        let mut s = d.subjects()[0].clone();
        s.label = None;
        assert!(render_serialized(d.schema(), &s, SerializedRole::IclWithLabel).is_err());
        assert!(render_serialized(d.schema(), &s, SerializedRole::FewShotTarget).is_ok());
    }
}
